use crate::admin::QuorumPolicy;
use crate::codec::{CodecError, Decode, Encode, Reader, Writer};
use crate::crypto::{hash, PublicKey};
use crate::enclave::Measurement;

use super::scanner::{DEFAULT_REPORT_SIZE, REPORT_OVERHEAD};

/// Hard-coded constants of an agent build. All of them feed the measurement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentConfig {
    pub name: String,
    pub version: String,
    pub ias_pk: PublicKey,
    /// `admin_pks[i]` belongs to administrator `i + 1`; it also certifies that organization's ledger peer.
    pub admin_pks: Vec<PublicKey>,
    pub authority_pk: PublicKey,
    pub policy: QuorumPolicy,
    pub report_size: u32,
    /// Builds this one accepts the cluster key from.
    pub accepted_predecessors: Vec<Measurement>,
    pub confirm_retries: u32,
    /// Test fixture: a build that leaks complaint bodies into its log.
    pub debug_leak: bool,
}

impl AgentConfig {
    pub fn new(ias_pk: PublicKey, admin_pks: Vec<PublicKey>, authority_pk: PublicKey, policy: QuorumPolicy) -> Self {
        AgentConfig {
            name: "econf".into(),
            version: "1.0".into(),
            ias_pk,
            admin_pks,
            authority_pk,
            policy,
            report_size: DEFAULT_REPORT_SIZE,
            accepted_predecessors: Vec::new(),
            confirm_retries: 3,
            debug_leak: false,
        }
    }

    pub fn report_capacity(&self) -> usize {
        (self.report_size as usize).saturating_sub(REPORT_OVERHEAD)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.admin_pks.len() != self.policy.n as usize {
            return Err(format!("{} admin keys for n={}", self.admin_pks.len(), self.policy.n));
        }
        if self.report_capacity() < 4 {
            return Err(format!("report_size {} below minimum {}", self.report_size, REPORT_OVERHEAD + 4));
        }
        if self.name.is_empty() {
            return Err("empty name".into());
        }
        Ok(())
    }

    pub fn code_identity(&self) -> String {
        format!("{}/{};constants={}", self.name, self.version, hash(&self.to_bytes()).to_hex())
    }
}

impl Encode for AgentConfig {
    fn encode(&self, w: &mut Writer) {
        w.str(&self.name)
            .str(&self.version)
            .put(&self.ias_pk)
            .list(&self.admin_pks)
            .put(&self.authority_pk)
            .put(&self.policy)
            .u32(self.report_size)
            .list(&self.accepted_predecessors)
            .u32(self.confirm_retries)
            .bool(self.debug_leak);
    }
}

impl Decode for AgentConfig {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(AgentConfig {
            name: r.string()?,
            version: r.string()?,
            ias_pk: r.get()?,
            admin_pks: r.list()?,
            authority_pk: r.get()?,
            policy: r.get()?,
            report_size: r.u32()?,
            accepted_predecessors: r.list()?,
            confirm_retries: r.u32()?,
            debug_leak: r.bool()?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{derive_rng, generate_keypair, Scheme};

    fn config(n: u32) -> AgentConfig {
        let mut rng = derive_rng(1, "config");
        let admins = (0..n).map(|_| generate_keypair(Scheme::Admin, &mut rng).public).collect();
        let ias = generate_keypair(Scheme::Admin, &mut rng).public;
        let authority = generate_keypair(Scheme::Agent, &mut rng).public;
        AgentConfig::new(ias, admins, authority, QuorumPolicy::new(n, n - 1).unwrap())
    }

    #[test]
    fn round_trips_and_validates() {
        let c = config(4);
        assert_eq!(c.validate(), Ok(()));
        assert_eq!(AgentConfig::from_bytes(&c.to_bytes()), Ok(c));
    }

    #[test]
    fn rejects_mismatched_admin_count() {
        let mut c = config(4);
        c.admin_pks.pop();
        assert!(c.validate().is_err());
        let mut c = config(4);
        c.report_size = REPORT_OVERHEAD as u32;
        assert!(c.validate().is_err());
    }

    #[test]
    fn every_constant_changes_the_identity() {
        let base = config(4);
        let mut v = base.clone();
        v.version = "1.1".into();
        let mut r = base.clone();
        r.report_size += 1;
        let mut l = base.clone();
        l.debug_leak = true;
        let ids: std::collections::BTreeSet<String> = [&base, &v, &r, &l].iter().map(|c| c.code_identity()).collect();
        assert_eq!(ids.len(), 4);
    }
}
