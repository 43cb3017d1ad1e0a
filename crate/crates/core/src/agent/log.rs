//! Hash-chained, signed enclave log.
//!
//! `state_i = hash(state_{i-1} || encode(t, kind, message))`, with
//! `state_{-1} = hash(agent_id)`. Each record carries the agent's signature
//! over its state. A [`LogHead`] binds the current state and record count to
//! a verifier nonce so truncation of the tail is detectable.

use thiserror::Error;

use crate::codec::{CodecError, Decode, Encode, Reader, Writer};
use crate::crypto::{hash, hash_parts, sign, verify, HashDigest, PublicKey, SecretKey, Signature};
use crate::enclave::TrustedTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LogKind {
    Info = 1,
    Warning = 2,
    Error = 3,
    Periodic = 4,
}

impl LogKind {
    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            1 => Some(LogKind::Info),
            2 => Some(LogKind::Warning),
            3 => Some(LogKind::Error),
            4 => Some(LogKind::Periodic),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LogKind::Info => "INFO",
            LogKind::Warning => "WARNING",
            LogKind::Error => "ERROR",
            LogKind::Periodic => "PERIODIC",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogRecord {
    pub t: TrustedTime,
    pub kind: LogKind,
    pub message: Vec<u8>,
    pub state: HashDigest,
    pub signature: Signature,
}

fn body_bytes(t: &TrustedTime, kind: LogKind, message: &[u8]) -> Vec<u8> {
    let mut w = Writer::new();
    w.put(t).u8(kind as u8).bytes(message);
    w.into_bytes()
}

fn sig_message(state: &HashDigest) -> Vec<u8> {
    let mut m = b"confid/log".to_vec();
    m.extend_from_slice(state.as_bytes());
    m
}

pub fn genesis(agent_id: &HashDigest) -> HashDigest {
    hash(agent_id.as_bytes())
}

impl LogRecord {
    pub fn next_state(prev: &HashDigest, t: &TrustedTime, kind: LogKind, message: &[u8]) -> HashDigest {
        hash_parts(&[prev.as_bytes(), &body_bytes(t, kind, message)])
    }

    pub fn links_from(&self, prev: &HashDigest) -> bool {
        Self::next_state(prev, &self.t, self.kind, &self.message) == self.state
    }

    pub fn signature_valid(&self, pk: &PublicKey) -> bool {
        verify(pk, &sig_message(&self.state), &self.signature)
    }

    pub fn message_str(&self) -> String {
        String::from_utf8_lossy(&self.message).into_owned()
    }
}

impl Encode for LogRecord {
    fn encode(&self, w: &mut Writer) {
        w.put(&self.t).u8(self.kind as u8).bytes(&self.message).put(&self.state).put(&self.signature);
    }
}

impl Decode for LogRecord {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let t = r.get()?;
        let kind = LogKind::from_tag(r.u8()?).ok_or(CodecError::Invalid("log kind"))?;
        Ok(LogRecord { t, kind, message: r.vec()?, state: r.get()?, signature: r.get()? })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogHead {
    pub state: HashDigest,
    pub count: u64,
    pub nonce: [u8; 32],
    pub signature: Signature,
}

impl LogHead {
    fn message(state: &HashDigest, count: u64, nonce: &[u8; 32]) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(b"confid/log-head").raw(state.as_bytes()).u64(count).raw(nonce);
        w.into_bytes()
    }

    pub fn verify(&self, pk: &PublicKey) -> bool {
        verify(pk, &Self::message(&self.state, self.count, &self.nonce), &self.signature)
    }
}

impl Encode for LogHead {
    fn encode(&self, w: &mut Writer) {
        w.put(&self.state).u64(self.count).raw(&self.nonce).put(&self.signature);
    }
}

impl Decode for LogHead {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(LogHead { state: r.get()?, count: r.u64()?, nonce: r.array()?, signature: r.get()? })
    }
}

/// Enclave-side log writer. Volatile: a reboot starts a fresh genesis chain.
#[derive(Debug, Clone)]
pub struct LogWriter {
    genesis: HashDigest,
    state: HashDigest,
    count: u64,
}

impl LogWriter {
    pub fn new(agent_id: &HashDigest) -> Self {
        let g = genesis(agent_id);
        LogWriter { genesis: g, state: g, count: 0 }
    }

    pub fn genesis(&self) -> HashDigest {
        self.genesis
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn emit(&mut self, sk: &SecretKey, t: TrustedTime, kind: LogKind, message: &[u8]) -> LogRecord {
        let state = LogRecord::next_state(&self.state, &t, kind, message);
        self.state = state;
        self.count += 1;
        LogRecord { t, kind, message: message.to_vec(), state, signature: sign(sk, &sig_message(&state)) }
    }

    pub fn head(&self, sk: &SecretKey, nonce: [u8; 32]) -> LogHead {
        let signature = sign(sk, &LogHead::message(&self.state, self.count, &nonce));
        LogHead { state: self.state, count: self.count, nonce, signature }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ChainFault {
    #[error("record {0} signature invalid")]
    BadSignature(usize),
    #[error("record {0} does not link to its predecessor")]
    BrokenLink(usize),
    #[error("record {0} restarts the chain")]
    Restart(usize),
    #[error("log head does not match the exported records")]
    HeadMismatch,
}

/// Signature check over every record and, if given, the head.
pub fn check_signatures(pk: &PublicKey, records: &[LogRecord], head: Option<(&LogHead, &[u8; 32])>) -> Result<(), ChainFault> {
    if let Some(i) = records.iter().position(|r| !r.signature_valid(pk)) {
        return Err(ChainFault::BadSignature(i));
    }
    if let Some((h, nonce)) = head {
        if h.nonce != *nonce || !h.verify(pk) {
            return Err(ChainFault::HeadMismatch);
        }
    }
    Ok(())
}

/// Verified chain position: the state after `count` records.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainAnchor {
    pub state: HashDigest,
    pub count: u64,
}

impl ChainAnchor {
    pub fn genesis(agent_id: &HashDigest) -> Self {
        ChainAnchor { state: genesis(agent_id), count: 0 }
    }

    pub fn after(head: &LogHead) -> Self {
        ChainAnchor { state: head.state, count: head.count }
    }
}

/// Linkage from `anchor`, epoch continuity and, if given, agreement with the head.
pub fn check_linkage(agent_id: &HashDigest, anchor: &ChainAnchor, records: &[LogRecord], head: Option<&LogHead>) -> Result<(), ChainFault> {
    let g = genesis(agent_id);
    let mut prev = anchor.state;
    for (i, rec) in records.iter().enumerate() {
        if !rec.links_from(&prev) {
            if prev != g && rec.links_from(&g) {
                return Err(ChainFault::Restart(i));
            }
            return Err(ChainFault::BrokenLink(i));
        }
        if i > 0 && !records[i - 1].t.same_epoch(&rec.t) {
            return Err(ChainFault::Restart(i));
        }
        prev = rec.state;
    }
    if let Some(h) = head {
        if h.state != prev || h.count != anchor.count + records.len() as u64 {
            return Err(ChainFault::HeadMismatch);
        }
    }
    Ok(())
}

/// Full verification from genesis. Linkage runs first since it needs no signature checks.
pub fn verify_chain(
    agent_id: &HashDigest,
    pk: &PublicKey,
    records: &[LogRecord],
    head: Option<(&LogHead, &[u8; 32])>,
) -> Result<(), ChainFault> {
    check_linkage(agent_id, &ChainAnchor::genesis(agent_id), records, head.map(|(h, _)| h))?;
    check_signatures(pk, records, head)
}
