//! Administrator-side lease issuing, log-audited renewal, revival and upgrade approval.

pub mod lease;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::log::{check_linkage, check_signatures, ChainAnchor, ChainFault, LogHead, LogKind, LogRecord};
use crate::attestation::{verify_report, AttestationReport};
use crate::codec::{CodecError, Decode, Encode, Reader, Writer};
use crate::crypto::{sign, verify, HashDigest, PublicKey, Signature, SigningKeyPair};
use crate::enclave::{Measurement, SimClock, TrustedTime};

pub use lease::{Lease, LeaseError, Role};

/// Maximum trusted-time distance between consecutive PERIODIC records, inclusive.
pub const PERIODIC_WINDOW: u64 = 3600;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuorumPolicy {
    pub n: u32,
    pub k: u32,
    pub read_quorum: u32,
    pub upgrade_threshold: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid quorum policy: {0}")]
pub struct PolicyError(pub String);

impl QuorumPolicy {
    /// `read_quorum = n - k + 1`, `upgrade_threshold = n`.
    pub fn new(n: u32, k: u32) -> Result<Self, PolicyError> {
        if k < 1 || k > n {
            return Err(PolicyError(format!("need 1 <= k <= n, got k={k} n={n}")));
        }
        Ok(QuorumPolicy { n, k, read_quorum: n - k + 1, upgrade_threshold: n })
    }

    pub fn with_read_quorum(mut self, rq: u32) -> Result<Self, PolicyError> {
        if rq < 1 || rq > self.n {
            return Err(PolicyError(format!("need 1 <= read_quorum <= n, got {rq}")));
        }
        self.read_quorum = rq;
        Ok(self)
    }

    pub fn with_upgrade_threshold(mut self, t: u32) -> Result<Self, PolicyError> {
        if t < 1 || t > self.n {
            return Err(PolicyError(format!("need 1 <= upgrade_threshold <= n, got {t}")));
        }
        self.upgrade_threshold = t;
        Ok(self)
    }
}

impl Encode for QuorumPolicy {
    fn encode(&self, w: &mut Writer) {
        w.u32(self.n).u32(self.k).u32(self.read_quorum).u32(self.upgrade_threshold);
    }
}

impl Decode for QuorumPolicy {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let p = QuorumPolicy { n: r.u32()?, k: r.u32()?, read_quorum: r.u32()?, upgrade_threshold: r.u32()? };
        let ok = (1..=p.n).contains(&p.k) && (1..=p.n).contains(&p.read_quorum) && (1..=p.n).contains(&p.upgrade_threshold);
        ok.then_some(p).ok_or(CodecError::Invalid("quorum policy"))
    }
}

/// What an agent publishes after attestation: signed trusted time, key and report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Publication {
    pub t: TrustedTime,
    pub t_sig: Signature,
    pub agent_pk: PublicKey,
    pub report: AttestationReport,
}

pub fn trusted_time_message(t: &TrustedTime) -> Vec<u8> {
    let mut m = b"confid/trusted-time".to_vec();
    m.extend_from_slice(&t.to_wire());
    m
}

impl Publication {
    pub fn agent_id(&self) -> HashDigest {
        self.agent_pk.fingerprint()
    }

    pub fn time_signature_valid(&self) -> bool {
        verify(&self.agent_pk, &trusted_time_message(&self.t), &self.t_sig)
    }
}

impl Encode for Publication {
    fn encode(&self, w: &mut Writer) {
        w.put(&self.t).put(&self.t_sig).put(&self.agent_pk).put(&self.report);
    }
}

impl Decode for Publication {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Publication { t: r.get()?, t_sig: r.get()?, agent_pk: r.get()?, report: r.get()? })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AdminError {
    #[error("attestation report invalid")]
    ReportInvalid,
    #[error("quote user data does not match agent key")]
    UserDataMismatch,
    #[error("measurement not approved by this administrator")]
    MeasurementNotAccepted,
    #[error("trusted time signature invalid")]
    BadTimeSignature,
    #[error("agent unreachable")]
    Unreachable,
    #[error("agent unknown to this administrator")]
    UnknownAgent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Error, Serialize, Deserialize)]
pub enum RenewRefusal {
    #[error("log chain broken")]
    ChainBroken,
    #[error("log contains ERROR records")]
    ErrorPresent,
    #[error("PERIODIC records leave an hour-long gap")]
    PeriodicGap,
    #[error("log shows an enclave restart")]
    RestartDetected,
    #[error("agent unknown to this administrator")]
    UnknownAgent,
}

/// Endpoint an administrator uses to reach an agent directly.
pub trait AgentEndpoint {
    fn publication(&mut self) -> Option<Publication>;
    /// Freshly signed trusted time; served even when the agent holds no valid lease.
    fn signed_trusted_time(&mut self) -> Option<(TrustedTime, Signature)>;
    /// Signed log head for `nonce` and the host's export index just past the records it covers.
    fn log_anchor(&mut self, nonce: [u8; 32]) -> Option<(LogHead, u64)>;
}

/// Where an administrator's next audit of an agent's log starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuditAnchor {
    /// Host export index of the first unaudited record.
    pub index: u64,
    pub chain: ChainAnchor,
    /// Trusted time of the last audited point; the first PERIODIC gap is measured from it.
    pub time: u64,
}

impl AuditAnchor {
    pub fn genesis(agent_id: &HashDigest, time: u64) -> Self {
        AuditAnchor { index: 0, chain: ChainAnchor::genesis(agent_id), time }
    }
}

#[derive(Debug, Clone)]
struct AgentRecord {
    pk: PublicKey,
    role: Role,
    base: TrustedTime,
    anchor: AuditAnchor,
}

/// Policy-only audit of the records exported since `anchor`, in refusal-precedence order.
///
/// `expected_epoch` is the trusted-time nonce of the lease being renewed.
/// Returns the trusted time in the last record.
pub fn audit_log(
    agent_id: &HashDigest,
    pk: &PublicKey,
    anchor: &AuditAnchor,
    records: &[LogRecord],
    head: &LogHead,
    nonce: &[u8; 32],
    expected_epoch: Option<&[u8; 32]>,
) -> Result<TrustedTime, RenewRefusal> {
    let Some(last) = records.last() else {
        return Err(RenewRefusal::ChainBroken);
    };
    if let Err(ChainFault::BadSignature(_) | ChainFault::HeadMismatch) = check_signatures(pk, records, Some((head, nonce))) {
        return Err(RenewRefusal::ChainBroken);
    }
    if records.iter().any(|r| r.kind == LogKind::Error) {
        return Err(RenewRefusal::ErrorPresent);
    }
    let periodic = records.iter().filter(|r| r.kind == LogKind::Periodic).map(|r| r.t.time);
    let points: Vec<u64> = std::iter::once(anchor.time).chain(periodic).chain(std::iter::once(last.t.time)).collect();
    if points.windows(2).any(|w| w[1].saturating_sub(w[0]) > PERIODIC_WINDOW) {
        return Err(RenewRefusal::PeriodicGap);
    }
    match check_linkage(agent_id, &anchor.chain, records, Some(head)) {
        Ok(()) => {}
        Err(ChainFault::Restart(_)) => return Err(RenewRefusal::RestartDetected),
        Err(_) => return Err(RenewRefusal::ChainBroken),
    }
    if expected_epoch.is_some_and(|e| records.iter().any(|r| r.t.nonce != *e)) {
        return Err(RenewRefusal::RestartDetected);
    }
    Ok(last.t)
}

pub struct Administrator {
    id: u32,
    keypair: SigningKeyPair,
    clock: SimClock,
    ias_pk: PublicKey,
    accepted: Vec<Measurement>,
    agents: BTreeMap<HashDigest, AgentRecord>,
}

impl Administrator {
    /// `id` is 1-based and indexes the agents' hard-coded admin key list.
    pub fn new(id: u32, keypair: SigningKeyPair, clock: SimClock, ias_pk: PublicKey, measurement: Measurement) -> Self {
        Administrator { id, keypair, clock, ias_pk, accepted: vec![measurement], agents: BTreeMap::new() }
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn public_key(&self) -> &PublicKey {
        &self.keypair.public
    }

    pub fn keypair(&self) -> &SigningKeyPair {
        &self.keypair
    }

    pub fn accept_measurement(&mut self, m: Measurement) {
        if !self.accepted.contains(&m) {
            self.accepted.push(m);
        }
    }

    pub fn knows(&self, agent_id: &HashDigest) -> bool {
        self.agents.contains_key(agent_id)
    }

    fn check_publication(&self, p: &Publication, measurements: &[Measurement]) -> Result<(), AdminError> {
        let quote = verify_report(&self.ias_pk, &p.report).map_err(|_| AdminError::ReportInvalid)?;
        if quote.user_data != p.agent_id().0 {
            return Err(AdminError::UserDataMismatch);
        }
        if !measurements.contains(&quote.measurement) {
            return Err(AdminError::MeasurementNotAccepted);
        }
        if !p.time_signature_valid() {
            return Err(AdminError::BadTimeSignature);
        }
        Ok(())
    }

    fn sign_lease(&self, agent_id: HashDigest, role: Role, upgrade: Option<Measurement>, base: TrustedTime, ttl: u64) -> Lease {
        let mut lease = Lease {
            agent_id,
            admin_id: self.id,
            role,
            upgrade_measurement: upgrade,
            creation_time: self.clock.now(),
            base_trusted_time: base,
            expiration: base.time + ttl.max(1),
            sig: Vec::new(),
        };
        lease.sign_with(&self.keypair.secret);
        lease
    }

    /// Verifies report, user data, measurement and signed time, then signs.
    pub fn issue_lease(&mut self, p: &Publication, role: Role, ttl: u64) -> Result<Lease, AdminError> {
        self.check_publication(p, &self.accepted)?;
        let id = p.agent_id();
        let anchor = AuditAnchor::genesis(&id, p.t.time);
        self.agents.insert(id, AgentRecord { pk: p.agent_pk.clone(), role, base: p.t, anchor });
        Ok(self.sign_lease(id, role - Role::UPGRADE, None, p.t, ttl))
    }

    /// Export index this administrator's next audit of `agent_id` starts at.
    pub fn audit_index(&self, agent_id: &HashDigest) -> Option<u64> {
        self.agents.get(agent_id).map(|r| r.anchor.index)
    }

    /// Renews against the trusted time in the last record of a clean log.
    ///
    /// `records` are the host's export starting at [`Administrator::audit_index`].
    pub fn renew_lease(
        &mut self,
        agent_id: &HashDigest,
        records: &[LogRecord],
        head: &LogHead,
        nonce: &[u8; 32],
        ttl: u64,
    ) -> Result<Lease, RenewRefusal> {
        let rec = self.agents.get(agent_id).ok_or(RenewRefusal::UnknownAgent)?;
        let last = audit_log(agent_id, &rec.pk, &rec.anchor, records, head, nonce, Some(&rec.base.nonce))?;
        let role = rec.role;
        let rec = self.agents.get_mut(agent_id).expect("present");
        rec.anchor = AuditAnchor { index: rec.anchor.index + records.len() as u64, chain: ChainAnchor::after(head), time: last.time };
        Ok(self.sign_lease(*agent_id, role, None, last, ttl))
    }

    /// Issues a lease bound to trusted time freshly retrieved from the agent and
    /// restarts this administrator's audit at the agent's current log head.
    pub fn revive_stale_agent(
        &mut self,
        endpoint: &mut dyn AgentEndpoint,
        role: Option<Role>,
        ttl: u64,
        nonce: [u8; 32],
    ) -> Result<Lease, AdminError> {
        let p = endpoint.publication().ok_or(AdminError::Unreachable)?;
        self.check_publication(&p, &self.accepted)?;
        let (t, sig) = endpoint.signed_trusted_time().ok_or(AdminError::Unreachable)?;
        if !verify(&p.agent_pk, &trusted_time_message(&t), &sig) {
            return Err(AdminError::BadTimeSignature);
        }
        let (head, index) = endpoint.log_anchor(nonce).ok_or(AdminError::Unreachable)?;
        if head.nonce != nonce || !head.verify(&p.agent_pk) {
            return Err(AdminError::BadTimeSignature);
        }
        let id = p.agent_id();
        let role = role.or_else(|| self.agents.get(&id).map(|r| r.role)).ok_or(AdminError::UnknownAgent)?;
        let anchor = AuditAnchor { index, chain: ChainAnchor::after(&head), time: t.time };
        self.agents.insert(id, AgentRecord { pk: p.agent_pk.clone(), role, base: t, anchor });
        Ok(self.sign_lease(id, role - Role::UPGRADE, None, t, ttl))
    }

    /// Special lease sanctioning `new_measurement` for the agent in `p`.
    pub fn issue_upgrade_lease(&mut self, p: &Publication, new_measurement: Measurement, ttl: u64) -> Result<Lease, AdminError> {
        self.check_publication(p, &[new_measurement])?;
        Ok(self.sign_lease(p.agent_id(), Role::UPGRADE, Some(new_measurement), p.t, ttl))
    }

    /// Detached signature with this admin's key (peer certificates, endorsements of policy).
    pub fn sign_bytes(&self, msg: &[u8]) -> Signature {
        sign(&self.keypair.secret, msg)
    }
}

/// Upgrade leases from every admin in `admins`; the threshold is enforced by the receiving enclave.
pub fn issue_upgrade_leases(
    admins: &mut [&mut Administrator],
    p: &Publication,
    new_measurement: Measurement,
    ttl: u64,
) -> Result<Vec<Lease>, AdminError> {
    admins.iter_mut().map(|a| a.issue_upgrade_lease(p, new_measurement, ttl)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::log::LogWriter;
    use proptest::prelude::*;
    use crate::attestation::{AttestationAuthority, Quote};
    use crate::crypto::{derive_rng, generate_keypair, Scheme};
    use crate::enclave::measure;

    struct Setup {
        admin: Administrator,
        agent: SigningKeyPair,
        publication: Publication,
        ias: AttestationAuthority,
        m: Measurement,
    }

    fn setup() -> Setup {
        let mut rng = derive_rng(31, "admin");
        let mut ias = AttestationAuthority::new(&mut rng);
        let m = measure("econf/1.0");
        let clock = SimClock::new(1_000);
        let admin = Administrator::new(1, generate_keypair(Scheme::Admin, &mut rng), clock, ias.public_key(), m);
        let agent = generate_keypair(Scheme::Agent, &mut rng);
        let report = ias.sign_quote(&Quote { measurement: m, user_data: agent.public.fingerprint().0, platform_info: vec![] });
        let t = TrustedTime { time: 1_000, nonce: [3; 32] };
        let publication = Publication {
            t,
            t_sig: sign(&agent.secret, &trusted_time_message(&t)),
            agent_pk: agent.public.clone(),
            report,
        };
        Setup { admin, agent, publication, ias, m }
    }

    #[test]
    fn issued_lease_spans_ttl_and_binds_admin_key() {
        let mut s = setup();
        let lease = s.admin.issue_lease(&s.publication, Role::WRITER, 86_400).unwrap();
        assert_eq!(lease.expiration - lease.base_trusted_time.time, 86_400);
        assert_eq!(lease.agent_id, s.agent.public.fingerprint());
        assert!(lease.verify_signature(s.admin.public_key()));
        let mut rng = derive_rng(32, "other");
        assert!(!lease.verify_signature(&generate_keypair(Scheme::Admin, &mut rng).public));
    }

    #[test]
    fn forged_publications_are_refused() {
        let mut s = setup();
        let mut rng = derive_rng(33, "rogue");
        let mut rogue = AttestationAuthority::new(&mut rng);
        let mut forged = s.publication.clone();
        forged.report = rogue.sign_quote(&Quote { measurement: s.m, user_data: s.agent.public.fingerprint().0, platform_info: vec![] });
        assert_eq!(s.admin.issue_lease(&forged, Role::WRITER, 10), Err(AdminError::ReportInvalid));
        let mut bad_time = s.publication.clone();
        bad_time.t.time += 1;
        assert_eq!(s.admin.issue_lease(&bad_time, Role::WRITER, 10), Err(AdminError::BadTimeSignature));
        let other_m = s.ias.sign_quote(&Quote { measurement: measure("x/2"), user_data: s.agent.public.fingerprint().0, platform_info: vec![] });
        let mut wrong_m = s.publication.clone();
        wrong_m.report = other_m;
        assert_eq!(s.admin.issue_lease(&wrong_m, Role::WRITER, 10), Err(AdminError::MeasurementNotAccepted));
    }

    fn hourly_log(s: &Setup, hours: u64, skip: Option<u64>, error_at: Option<u64>) -> (Vec<LogRecord>, LogWriter) {
        let id = s.agent.public.fingerprint();
        let mut w = LogWriter::new(&id);
        let mut recs = Vec::new();
        for h in 0..=hours {
            let t = TrustedTime { time: 1_000 + h * 3600, nonce: [3; 32] };
            if error_at == Some(h) {
                recs.push(w.emit(&s.agent.secret, t, LogKind::Error, b"tamper"));
            }
            let rec = w.emit(&s.agent.secret, t, LogKind::Periodic, b"tick");
            if skip != Some(h) {
                recs.push(rec);
            }
        }
        (recs, w)
    }

    #[test]
    fn renewal_policy() {
        let mut s = setup();
        s.admin.issue_lease(&s.publication, Role::WRITER, 86_400).unwrap();
        let id = s.agent.public.fingerprint();
        let nonce = [7; 32];

        let (clean, w) = hourly_log(&s, 6, None, None);
        let head = w.head(&s.agent.secret, nonce);
        let renewed = s.admin.renew_lease(&id, &clean, &head, &nonce, 86_400).unwrap();
        assert_eq!(renewed.base_trusted_time, clean.last().unwrap().t);

        let (gappy, w) = hourly_log(&s, 6, Some(3), None);
        let head = w.head(&s.agent.secret, nonce);
        let mut fresh = setup();
        fresh.admin.issue_lease(&fresh.publication, Role::WRITER, 86_400).unwrap();
        assert_eq!(fresh.admin.renew_lease(&id, &gappy, &head, &nonce, 86_400), Err(RenewRefusal::PeriodicGap));

        let (errs, w) = hourly_log(&s, 6, None, Some(2));
        let head = w.head(&s.agent.secret, nonce);
        assert_eq!(fresh.admin.renew_lease(&id, &errs, &head, &nonce, 86_400), Err(RenewRefusal::ErrorPresent));
    }

    #[test]
    fn periodic_window_is_boundary_inclusive() {
        let s = setup();
        let id = s.agent.public.fingerprint();
        let mut w = LogWriter::new(&id);
        let nonce = [1; 32];
        let at = |t| TrustedTime { time: t, nonce: [3; 32] };
        let recs = vec![
            w.emit(&s.agent.secret, at(0), LogKind::Periodic, b""),
            w.emit(&s.agent.secret, at(3600), LogKind::Periodic, b""),
        ];
        let head = w.head(&s.agent.secret, nonce);
        let a = AuditAnchor::genesis(&id, 0);
        assert!(audit_log(&id, &s.agent.public, &a, &recs, &head, &nonce, None).is_ok());
        let mut recs2 = recs.clone();
        recs2.push(w.emit(&s.agent.secret, at(7201), LogKind::Info, b""));
        let head = w.head(&s.agent.secret, nonce);
        assert_eq!(audit_log(&id, &s.agent.public, &a, &recs2, &head, &nonce, None), Err(RenewRefusal::PeriodicGap));
    }

    #[test]
    fn restart_is_detected_by_epoch_change() {
        let mut s = setup();
        s.admin.issue_lease(&s.publication, Role::WRITER, 86_400).unwrap();
        let id = s.agent.public.fingerprint();
        let mut w = LogWriter::new(&id);
        let recs = vec![w.emit(&s.agent.secret, TrustedTime { time: 2_000, nonce: [99; 32] }, LogKind::Periodic, b"")];
        let nonce = [0; 32];
        let head = w.head(&s.agent.secret, nonce);
        assert_eq!(s.admin.renew_lease(&id, &recs, &head, &nonce, 100), Err(RenewRefusal::RestartDetected));
    }

    #[test]
    fn policy_defaults() {
        let p = QuorumPolicy::new(4, 3).unwrap();
        assert_eq!((p.read_quorum, p.upgrade_threshold), (2, 4));
        assert!(QuorumPolicy::new(3, 4).is_err());
        assert!(QuorumPolicy::new(3, 0).is_err());
        assert!(p.with_read_quorum(5).is_err());
        assert_eq!(QuorumPolicy::from_bytes(&p.to_bytes()), Ok(p));
    }

    fn build_log(s: &Setup, plan: &[(u64, LogKind)]) -> (Vec<LogRecord>, LogHead) {
        let mut w = LogWriter::new(&s.agent.public.fingerprint());
        let recs = plan.iter().map(|&(t, k)| w.emit(&s.agent.secret, TrustedTime { time: t, nonce: [3; 32] }, k, b"r")).collect();
        (recs, w.head(&s.agent.secret, [7; 32]))
    }

    fn verdict(s: &Setup, plan: &[(u64, LogKind)]) -> Result<TrustedTime, RenewRefusal> {
        let id = s.agent.public.fingerprint();
        let (recs, head) = build_log(s, plan);
        audit_log(&id, &s.agent.public, &AuditAnchor::genesis(&id, 1_000), &recs, &head, &[7; 32], Some(&[3; 32]))
    }

    fn arb_plan() -> impl Strategy<Value = Vec<(u64, LogKind)>> {
        let kind = prop_oneof![Just(LogKind::Info), Just(LogKind::Warning), Just(LogKind::Periodic), Just(LogKind::Periodic)];
        proptest::collection::vec((1u64..2_400, kind), 1..14).prop_map(|steps| {
            let mut t = 1_000;
            steps
                .into_iter()
                .map(|(dt, k)| {
                    t += dt;
                    (t, k)
                })
                .collect()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn adding_a_violation_never_enables_renewal(plan in arb_plan(), at in any::<prop::sample::Index>(), drop in any::<prop::sample::Index>()) {
            let s = setup();
            let base = verdict(&s, &plan);
            let j = at.index(plan.len() + 1);
            let mut with_error = plan.clone();
            let t = if j == 0 { plan[0].0 } else { plan[j - 1].0 };
            with_error.insert(j, (t, LogKind::Error));
            prop_assert_eq!(verdict(&s, &with_error), Err(RenewRefusal::ErrorPresent));
            let periodic: Vec<usize> = (0..plan.len()).filter(|&i| plan[i].1 == LogKind::Periodic).collect();
            if !periodic.is_empty() {
                let mut fewer = plan.clone();
                fewer.remove(periodic[drop.index(periodic.len())]);
                if base.is_err() && !fewer.is_empty() {
                    prop_assert!(verdict(&s, &fewer).is_err());
                }
            }
        }
    }

}
