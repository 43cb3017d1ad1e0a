//! Admin-visible observation log and the secret registry it is audited against.
//!
//! Every value that crosses an enclave boundary, travels on the message bus, or
//! lands on untrusted disk is appended to a [`Trace`]. Tests register secrets
//! (keys, complaint bodies) in a [`SecretRegistry`] at creation time and then
//! require that no registered secret occurs contiguously in any trace frame.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::codec::Frame;
use crate::crypto::HashDigest;

/// Shortest secret the scanner accepts; shorter values collide with ordinary data.
pub const MIN_SECRET_LEN: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Channel {
    /// Request entering an enclave on `machine`.
    Ecall { machine: u32 },
    /// Response leaving an enclave on `machine`.
    Eret { machine: u32 },
    /// Message on the in-process bus.
    Bus { from: String, to: String, kind: String },
    /// Bytes written to untrusted storage.
    Disk { path: String },
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Channel::Ecall { machine } => write!(f, "ecall@{machine}"),
            Channel::Eret { machine } => write!(f, "eret@{machine}"),
            Channel::Bus { from, to, kind } => write!(f, "bus:{kind}:{from}->{to}"),
            Channel::Disk { path } => write!(f, "disk:{path}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub channel: Channel,
    pub frame: Frame,
}

/// Append-only, shareable trace. Appends are atomic.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    inner: Arc<Mutex<Vec<TraceRecord>>>,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, channel: Channel, frame: Frame) {
        self.inner.lock().expect("trace lock").push(TraceRecord { channel, frame });
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("trace lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn snapshot(&self) -> Vec<TraceRecord> {
        self.inner.lock().expect("trace lock").clone()
    }

    pub fn total_bytes(&self) -> usize {
        self.inner.lock().expect("trace lock").iter().map(|r| r.frame.len()).sum()
    }
}

#[derive(Debug, Clone, Default)]
struct RegistryInner {
    secrets: Vec<(String, Vec<u8>)>,
    key_digests: BTreeMap<String, HashDigest>,
}

/// Test instrumentation: secrets that must never be observable, plus
/// per-enclave key digests used to compare keys without revealing them.
#[derive(Debug, Clone, Default)]
pub struct SecretRegistry {
    inner: Arc<Mutex<RegistryInner>>,
}

impl SecretRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Secrets shorter than [`MIN_SECRET_LEN`] are ignored.
    pub fn register(&self, label: impl Into<String>, secret: &[u8]) {
        if secret.len() < MIN_SECRET_LEN {
            return;
        }
        self.inner.lock().expect("registry lock").secrets.push((label.into(), secret.to_vec()));
    }

    pub fn publish_key_digest(&self, holder: impl Into<String>, digest: HashDigest) {
        self.inner.lock().expect("registry lock").key_digests.insert(holder.into(), digest);
    }

    pub fn forget_key_digest(&self, holder: &str) {
        self.inner.lock().expect("registry lock").key_digests.remove(holder);
    }

    pub fn key_digests(&self) -> BTreeMap<String, HashDigest> {
        self.inner.lock().expect("registry lock").key_digests.clone()
    }

    pub fn secret_count(&self) -> usize {
        self.inner.lock().expect("registry lock").secrets.len()
    }

    pub fn secrets(&self) -> Vec<(String, Vec<u8>)> {
        self.inner.lock().expect("registry lock").secrets.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecretHit {
    pub label: String,
    pub channel: String,
    pub record: usize,
    pub offset: usize,
}

/// Finds every contiguous occurrence of a registered secret in `records`.
pub fn scan_for_secrets(records: &[TraceRecord], secrets: &[(String, Vec<u8>)]) -> Vec<SecretHit> {
    let mut by_prefix: HashMap<[u8; MIN_SECRET_LEN], Vec<usize>> = HashMap::new();
    for (i, (_, s)) in secrets.iter().enumerate() {
        if s.len() >= MIN_SECRET_LEN {
            let key: [u8; MIN_SECRET_LEN] = s[..MIN_SECRET_LEN].try_into().expect("length checked");
            by_prefix.entry(key).or_default().push(i);
        }
    }
    let mut hits = Vec::new();
    for (ri, rec) in records.iter().enumerate() {
        let bytes = &rec.frame.bytes;
        if bytes.len() < MIN_SECRET_LEN {
            continue;
        }
        for off in 0..=bytes.len() - MIN_SECRET_LEN {
            let window: [u8; MIN_SECRET_LEN] = bytes[off..off + MIN_SECRET_LEN].try_into().expect("window");
            let Some(candidates) = by_prefix.get(&window) else { continue };
            for &si in candidates {
                let (label, secret) = &secrets[si];
                if bytes[off..].starts_with(secret) {
                    hits.push(SecretHit { label: label.clone(), channel: rec.channel.to_string(), record: ri, offset: off });
                }
            }
        }
    }
    hits
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceDivergence {
    RecordCount { left: usize, right: usize },
    Channel { record: usize },
    Length { record: usize, left: usize, right: usize },
    OpaqueLayout { record: usize },
    Byte { record: usize, offset: usize },
}

/// Position-wise comparison of two traces, ignoring bytes inside opaque ranges.
///
/// Both traces must have the same records, channels, lengths and opaque
/// layouts; clear bytes must match exactly.
pub fn structural_diff(left: &[TraceRecord], right: &[TraceRecord]) -> Option<TraceDivergence> {
    if left.len() != right.len() {
        return Some(TraceDivergence::RecordCount { left: left.len(), right: right.len() });
    }
    for (i, (a, b)) in left.iter().zip(right).enumerate() {
        if a.channel != b.channel {
            return Some(TraceDivergence::Channel { record: i });
        }
        if a.frame.len() != b.frame.len() {
            return Some(TraceDivergence::Length { record: i, left: a.frame.len(), right: b.frame.len() });
        }
        if a.frame.opaque != b.frame.opaque {
            return Some(TraceDivergence::OpaqueLayout { record: i });
        }
        let mut ranges = a.frame.opaque.iter().peekable();
        for (pos, (x, y)) in a.frame.bytes.iter().zip(&b.frame.bytes).enumerate() {
            while ranges.peek().is_some_and(|r| r.end <= pos) {
                ranges.next();
            }
            let opaque = ranges.peek().is_some_and(|r| r.contains(&pos));
            if !opaque && x != y {
                return Some(TraceDivergence::Byte { record: i, offset: pos });
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::Writer;
    use proptest::prelude::*;

    fn rec(bytes: &[u8]) -> TraceRecord {
        TraceRecord { channel: Channel::Disk { path: "x".into() }, frame: Frame::clear(bytes.to_vec()) }
    }

    #[test]
    fn scanner_finds_embedded_secret() {
        let secrets = vec![("k".to_string(), b"SECRET-VALUE".to_vec())];
        let records = vec![rec(b"nothing here"), rec(b"xxSECRET-VALUEyy")];
        let hits = scan_for_secrets(&records, &secrets);
        assert_eq!(hits.len(), 1);
        assert_eq!((hits[0].record, hits[0].offset), (1, 2));
        assert!(scan_for_secrets(&[rec(b"SECRET-VALU")], &secrets).is_empty());
    }

    #[test]
    fn short_secrets_are_not_registered() {
        let reg = SecretRegistry::new();
        reg.register("short", b"abc");
        assert_eq!(reg.secret_count(), 0);
    }

    proptest! {
        #[test]
        fn scanner_agrees_with_naive_search(
            hay in proptest::collection::vec(0u8..4, 0..200),
            needle in proptest::collection::vec(0u8..4, 8..12),
        ) {
            let naive = hay.windows(needle.len()).filter(|w| *w == needle.as_slice()).count();
            let hits = scan_for_secrets(&[rec(&hay)], &[("s".into(), needle.clone())]);
            prop_assert_eq!(hits.len(), naive);
        }
    }

    #[test]
    fn structural_diff_ignores_opaque_bytes_only() {
        let build = |secret: u8, clear: u8| {
            let mut w = Writer::new();
            w.u8(clear).opaque_raw(&[secret; 4]).u8(9);
            TraceRecord { channel: Channel::Ecall { machine: 1 }, frame: w.into_frame() }
        };
        assert_eq!(structural_diff(&[build(1, 0)], &[build(2, 0)]), None);
        assert_eq!(structural_diff(&[build(1, 0)], &[build(1, 5)]), Some(TraceDivergence::Byte { record: 0, offset: 0 }));
        assert!(matches!(structural_diff(&[build(1, 0)], &[]), Some(TraceDivergence::RecordCount { .. })));
    }
}
