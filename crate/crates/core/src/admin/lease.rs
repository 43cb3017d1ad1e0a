//! Signed lease wire format.
//!
//! ```text
//! offset  size  field
//!      0    32  agent_id
//!     32     4  admin_id            (u32 BE)
//!     36     4  role                (u32 BE flags)
//!    [40    32  upgrade measurement, present only when role has UPGRADE]
//!     40     8  creation_time       (u64 BE)
//!     48    40  base_trusted_time   (u64 BE seconds || 32-byte nonce)
//!     88     8  expiration          (u64 BE)
//!     96     4  sig_len             (u32 BE)
//!    100     -  sig                 (sig_len bytes over every preceding byte)
//! ```
//!
//! Offsets after `role` shift by 32 when the upgrade extension is present.

use bitflags::bitflags;
use thiserror::Error;

use crate::codec::{CodecError, Decode, Encode, Reader, Writer};
use crate::crypto::{sign, verify, HashDigest, PublicKey, SecretKey, Signature};
use crate::enclave::{Measurement, TrustedTime, TRUSTED_TIME_LEN};

pub const FIXED_LEN: usize = 100;
pub const UPGRADE_EXT_LEN: usize = 32;
/// Upper bound on `sig_len`; anything larger is rejected before allocation.
pub const MAX_SIG_LEN: usize = 1024;

pub mod offset {
    pub const AGENT_ID: usize = 0;
    pub const ADMIN_ID: usize = 32;
    pub const ROLE: usize = 36;
    pub const CREATION_TIME: usize = 40;
    pub const BASE_TRUSTED_TIME: usize = 48;
    pub const EXPIRATION: usize = 88;
    pub const SIG_LEN: usize = 96;
    pub const SIG: usize = 100;
}

bitflags! {
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
    pub struct Role: u32 {
        const LEADER = 1;
        const WRITER = 1 << 1;
        const SCANNER = 1 << 2;
        const UPGRADE = 1 << 3;
    }
}

impl Role {
    /// Parses `"leader+writer"` style names; `"backup"` or `""` is the empty role.
    pub fn parse(s: &str) -> Option<Role> {
        let mut role = Role::empty();
        for part in s.split(['+', ',', '|']).map(str::trim).filter(|p| !p.is_empty()) {
            role |= match part.to_ascii_lowercase().as_str() {
                "leader" => Role::LEADER,
                "writer" => Role::WRITER,
                "scanner" => Role::SCANNER,
                "upgrade" => Role::UPGRADE,
                "backup" | "none" => Role::empty(),
                _ => return None,
            };
        }
        Some(role)
    }

    pub fn name(&self) -> String {
        if self.is_empty() {
            return "backup".into();
        }
        self.iter_names().map(|(n, _)| n.to_ascii_lowercase()).collect::<Vec<_>>().join("+")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum LeaseError {
    #[error("lease buffer truncated")]
    TruncatedLease,
    #[error("sig_len does not match buffer length")]
    SigLenMismatch,
    #[error("unknown role bits")]
    InvalidRole,
    #[error("expiration not after base trusted time")]
    InvalidExpiration,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Lease {
    pub agent_id: HashDigest,
    pub admin_id: u32,
    pub role: Role,
    /// Sanctioned foreign measurement; present iff `role` has UPGRADE.
    pub upgrade_measurement: Option<Measurement>,
    pub creation_time: u64,
    pub base_trusted_time: TrustedTime,
    pub expiration: u64,
    pub sig: Vec<u8>,
}

impl Lease {
    fn ext_len(&self) -> usize {
        if self.role.contains(Role::UPGRADE) {
            UPGRADE_EXT_LEN
        } else {
            0
        }
    }

    pub fn encoded_len(&self) -> usize {
        FIXED_LEN + self.ext_len() + self.sig.len()
    }

    fn write_body(&self, out: &mut Vec<u8>, sig_len: u32) {
        out.extend_from_slice(self.agent_id.as_bytes());
        out.extend_from_slice(&self.admin_id.to_be_bytes());
        out.extend_from_slice(&self.role.bits().to_be_bytes());
        if self.role.contains(Role::UPGRADE) {
            let m = self.upgrade_measurement.unwrap_or_default();
            out.extend_from_slice(m.0.as_bytes());
        }
        out.extend_from_slice(&self.creation_time.to_be_bytes());
        out.extend_from_slice(&self.base_trusted_time.to_wire());
        out.extend_from_slice(&self.expiration.to_be_bytes());
        out.extend_from_slice(&sig_len.to_be_bytes());
    }

    /// Bytes covered by the signature, including `sig_len`.
    pub fn signed_portion(&self, sig_len: usize) -> Vec<u8> {
        let mut out = Vec::with_capacity(FIXED_LEN + self.ext_len());
        self.write_body(&mut out, sig_len as u32);
        out
    }

    pub fn to_wire(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.write_body(&mut out, self.sig.len() as u32);
        out.extend_from_slice(&self.sig);
        out
    }

    pub fn from_wire(buf: &[u8]) -> Result<Lease, LeaseError> {
        if buf.len() < offset::ROLE + 4 {
            return Err(LeaseError::TruncatedLease);
        }
        let u32_at = |o: usize| u32::from_be_bytes(buf[o..o + 4].try_into().expect("4 bytes"));
        let u64_at = |o: usize| u64::from_be_bytes(buf[o..o + 8].try_into().expect("8 bytes"));

        let role = Role::from_bits(u32_at(offset::ROLE)).ok_or(LeaseError::InvalidRole)?;
        let ext = if role.contains(Role::UPGRADE) { UPGRADE_EXT_LEN } else { 0 };
        if buf.len() < FIXED_LEN + ext {
            return Err(LeaseError::TruncatedLease);
        }
        let sig_len = u32_at(offset::SIG_LEN + ext) as usize;
        if sig_len > MAX_SIG_LEN {
            return Err(LeaseError::SigLenMismatch);
        }
        let total = FIXED_LEN + ext + sig_len;
        if buf.len() < total {
            return Err(LeaseError::TruncatedLease);
        }
        if buf.len() > total {
            return Err(LeaseError::SigLenMismatch);
        }

        let upgrade_measurement = (ext > 0).then(|| {
            Measurement(HashDigest(buf[offset::CREATION_TIME..offset::CREATION_TIME + 32].try_into().expect("32")))
        });
        let base: [u8; TRUSTED_TIME_LEN] =
            buf[offset::BASE_TRUSTED_TIME + ext..offset::EXPIRATION + ext].try_into().expect("40 bytes");
        let lease = Lease {
            agent_id: HashDigest(buf[..32].try_into().expect("32 bytes")),
            admin_id: u32_at(offset::ADMIN_ID),
            role,
            upgrade_measurement,
            creation_time: u64_at(offset::CREATION_TIME + ext),
            base_trusted_time: TrustedTime::from_wire(&base),
            expiration: u64_at(offset::EXPIRATION + ext),
            sig: buf[offset::SIG + ext..].to_vec(),
        };
        if lease.expiration <= lease.base_trusted_time.time {
            return Err(LeaseError::InvalidExpiration);
        }
        Ok(lease)
    }

    /// Fills `sig` with a signature from `sk`.
    pub fn sign_with(&mut self, sk: &SecretKey) {
        let sig_len = sk.scheme().signature_len();
        let sig = sign(sk, &self.signed_portion(sig_len));
        debug_assert_eq!(sig.0.len(), sig_len);
        self.sig = sig.0;
    }

    pub fn verify_signature(&self, admin_pk: &PublicKey) -> bool {
        verify(admin_pk, &self.signed_portion(self.sig.len()), &Signature(self.sig.clone()))
    }

    /// Signature valid under `admin_pks[admin_id - 1]`.
    pub fn verify_against(&self, admin_pks: &[PublicKey]) -> bool {
        match (self.admin_id as usize).checked_sub(1).and_then(|i| admin_pks.get(i)) {
            Some(pk) => self.verify_signature(pk),
            None => false,
        }
    }

    pub fn is_upgrade(&self) -> bool {
        self.role.contains(Role::UPGRADE)
    }

    /// Valid at `now` only within the same trusted-time epoch.
    pub fn is_current(&self, now: &TrustedTime) -> bool {
        self.base_trusted_time.same_epoch(now) && self.expiration > now.time
    }

    pub fn ttl(&self) -> u64 {
        self.expiration.saturating_sub(self.base_trusted_time.time)
    }
}

/// Encoded inside length-prefixed containers as a byte string.
impl Encode for Lease {
    fn encode(&self, w: &mut Writer) {
        let bytes = self.to_wire();
        let sig_start = bytes.len() - self.sig.len();
        w.u32(bytes.len() as u32).raw(&bytes[..sig_start]).opaque_raw(&bytes[sig_start..]);
    }
}

impl Decode for Lease {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Lease::from_wire(r.bytes()?).map_err(|_| CodecError::Invalid("lease"))
    }
}

pub fn encode_lease(lease: &Lease) -> Vec<u8> {
    lease.to_wire()
}

pub fn decode_lease(buf: &[u8]) -> Result<Lease, LeaseError> {
    Lease::from_wire(buf)
}
