//! Endorsed append-only ledger.
//!
//! Peers (one per administrator organization) store entries whose payloads are
//! ciphertext. A state is named by `hash(merkle_root || count || nonce)`; a GET
//! is answered only with endorsements over the requester's nonce, so an
//! enclave accepts a state iff `read_quorum` distinct organizations vouch for
//! it freshly.

pub mod merkle;
pub mod network;
pub mod peer;
pub mod wire;

use std::collections::{BTreeSet, HashSet};

use thiserror::Error;

use crate::codec::{CodecError, Decode, Encode, Reader, Writer};
use crate::crypto::{hash, hash_parts, sign, verify, Ciphertext, HashDigest, PublicKey, SecretKey, Signature};

pub use network::{HubStrategy, LedgerNetwork, UpdateReceipt};
pub use peer::{Peer, PeerBehavior};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EntryKind {
    Complaint = 1,
    ScanMarker = 2,
    CriticalLog = 3,
}

impl EntryKind {
    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            1 => Some(EntryKind::Complaint),
            2 => Some(EntryKind::ScanMarker),
            3 => Some(EntryKind::CriticalLog),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EntryKind::Complaint => "COMPLAINT",
            EntryKind::ScanMarker => "SCAN_MARKER",
            EntryKind::CriticalLog => "CRITICAL_LOG",
        }
    }

    /// Associated data binding a payload ciphertext to its entry kind.
    pub fn associated_data(self) -> Vec<u8> {
        let mut ad = b"confid/ledger/".to_vec();
        ad.push(self as u8);
        ad
    }
}

impl Encode for EntryKind {
    fn encode(&self, w: &mut Writer) {
        w.u8(*self as u8);
    }
}

impl Decode for EntryKind {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        EntryKind::from_tag(r.u8()?).ok_or(CodecError::Invalid("entry kind"))
    }
}

pub fn payload_hash(payload: &Ciphertext) -> HashDigest {
    hash(&payload.to_bytes())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerEntry {
    pub seq: u64,
    pub kind: EntryKind,
    pub payload: Ciphertext,
    pub payload_hash: HashDigest,
}

impl LedgerEntry {
    pub fn new(seq: u64, kind: EntryKind, payload: Ciphertext) -> Self {
        let payload_hash = payload_hash(&payload);
        LedgerEntry { seq, kind, payload, payload_hash }
    }

    pub fn hash_consistent(&self) -> bool {
        payload_hash(&self.payload) == self.payload_hash
    }

    pub fn leaf_hash(&self) -> HashDigest {
        hash_parts(&[&[0u8], &self.seq.to_be_bytes(), &[self.kind as u8], self.payload_hash.as_bytes()])
    }
}

impl Encode for LedgerEntry {
    fn encode(&self, w: &mut Writer) {
        w.u64(self.seq).put(&self.kind).put(&self.payload).put(&self.payload_hash);
    }
}

impl Decode for LedgerEntry {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(LedgerEntry { seq: r.u64()?, kind: r.get()?, payload: r.get()?, payload_hash: r.get()? })
    }
}

pub fn state_digest(root: &HashDigest, count: u64, nonce: &[u8; 32]) -> HashDigest {
    hash_parts(&[b"confid/state", root.as_bytes(), &count.to_be_bytes(), nonce])
}

/// Peer key certified by its organization's administrator key.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PeerCert {
    pub peer_id: u32,
    pub org_id: u32,
    pub peer_pk: PublicKey,
    pub signature: Signature,
}

impl PeerCert {
    pub fn tbs(peer_id: u32, org_id: u32, pk: &PublicKey) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(b"confid/peer-cert").u32(peer_id).u32(org_id).put(pk);
        w.into_bytes()
    }

    pub fn issue(peer_id: u32, org_id: u32, peer_pk: PublicKey, org_sk: &SecretKey) -> Self {
        let signature = sign(org_sk, &Self::tbs(peer_id, org_id, &peer_pk));
        PeerCert { peer_id, org_id, peer_pk, signature }
    }

    pub fn verify(&self, org_pks: &[PublicKey]) -> bool {
        match (self.org_id as usize).checked_sub(1).and_then(|i| org_pks.get(i)) {
            Some(pk) => verify(pk, &Self::tbs(self.peer_id, self.org_id, &self.peer_pk), &self.signature),
            None => false,
        }
    }
}

impl Encode for PeerCert {
    fn encode(&self, w: &mut Writer) {
        w.u32(self.peer_id).u32(self.org_id).put(&self.peer_pk).put(&self.signature);
    }
}

impl Decode for PeerCert {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(PeerCert { peer_id: r.u32()?, org_id: r.u32()?, peer_pk: r.get()?, signature: r.get()? })
    }
}

/// Verified-certificate memo keyed by certificate digest.
#[derive(Debug, Clone, Default)]
pub struct CertCache(HashSet<HashDigest>);

impl CertCache {
    pub fn check(&mut self, cert: &PeerCert, org_pks: &[PublicKey]) -> bool {
        let key = hash(&cert.to_bytes());
        if self.0.contains(&key) {
            return true;
        }
        let ok = cert.verify(org_pks);
        if ok {
            self.0.insert(key);
        }
        ok
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Endorsement {
    pub cert: PeerCert,
    pub state_digest: HashDigest,
    pub nonce: [u8; 32],
    pub signature: Signature,
}

impl Endorsement {
    fn message(digest: &HashDigest, nonce: &[u8; 32]) -> Vec<u8> {
        let mut m = b"confid/endorse".to_vec();
        m.extend_from_slice(digest.as_bytes());
        m.extend_from_slice(nonce);
        m
    }

    pub fn create(cert: &PeerCert, sk: &SecretKey, state_digest: HashDigest, nonce: [u8; 32]) -> Self {
        let signature = sign(sk, &Self::message(&state_digest, &nonce));
        Endorsement { cert: cert.clone(), state_digest, nonce, signature }
    }

    pub fn org_id(&self) -> u32 {
        self.cert.org_id
    }

    pub fn signature_valid(&self) -> bool {
        verify(&self.cert.peer_pk, &Self::message(&self.state_digest, &self.nonce), &self.signature)
    }
}

impl Encode for Endorsement {
    fn encode(&self, w: &mut Writer) {
        w.put(&self.cert).put(&self.state_digest).raw(&self.nonce).put(&self.signature);
    }
}

impl Decode for Endorsement {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Endorsement { cert: r.get()?, state_digest: r.get()?, nonce: r.array()?, signature: r.get()? })
    }
}

/// Peer approval of a proposed entry, required before the sequencer may commit it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProposalEndorsement {
    pub cert: PeerCert,
    pub proposal: HashDigest,
    pub signature: Signature,
}

pub fn proposal_digest(kind: EntryKind, payload_hash: &HashDigest) -> HashDigest {
    hash_parts(&[b"confid/proposal", &[kind as u8], payload_hash.as_bytes()])
}

impl ProposalEndorsement {
    pub fn create(cert: &PeerCert, sk: &SecretKey, proposal: HashDigest) -> Self {
        ProposalEndorsement { cert: cert.clone(), proposal, signature: sign(sk, proposal.as_bytes()) }
    }

    pub fn signature_valid(&self) -> bool {
        verify(&self.cert.peer_pk, self.proposal.as_bytes(), &self.signature)
    }
}

impl Encode for ProposalEndorsement {
    fn encode(&self, w: &mut Writer) {
        w.put(&self.cert).put(&self.proposal).put(&self.signature);
    }
}

impl Decode for ProposalEndorsement {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(ProposalEndorsement { cert: r.get()?, proposal: r.get()?, signature: r.get()? })
    }
}

/// Counts distinct organizations with valid, certified approvals of `proposal`.
pub fn proposal_quorum(
    endorsements: &[ProposalEndorsement],
    proposal: &HashDigest,
    org_pks: &[PublicKey],
    cache: &mut CertCache,
) -> usize {
    let orgs: BTreeSet<u32> = endorsements
        .iter()
        .filter(|e| e.proposal == *proposal && cache.check(&e.cert, org_pks) && e.signature_valid())
        .map(|e| e.cert.org_id)
        .collect();
    orgs.len()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Query {
    All,
    BySeq(u64),
    Head,
}

impl Encode for Query {
    fn encode(&self, w: &mut Writer) {
        match self {
            Query::All => w.u8(0),
            Query::BySeq(s) => w.u8(1).u64(*s),
            Query::Head => w.u8(2),
        };
    }
}

impl Decode for Query {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        match r.u8()? {
            0 => Ok(Query::All),
            1 => Ok(Query::BySeq(r.u64()?)),
            2 => Ok(Query::Head),
            _ => Err(CodecError::Invalid("query")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StateView {
    Full(Vec<LedgerEntry>),
    Single { entry: LedgerEntry, proof: Vec<HashDigest>, count: u64 },
    Head { root: HashDigest, count: u64 },
}

impl StateView {
    pub fn count(&self) -> u64 {
        match self {
            StateView::Full(e) => e.len() as u64,
            StateView::Single { count, .. } | StateView::Head { count, .. } => *count,
        }
    }

    /// Root implied by the view, or `None` if its contents are inconsistent.
    pub fn implied_root(&self) -> Option<HashDigest> {
        match self {
            StateView::Full(entries) => {
                let ok = entries.iter().enumerate().all(|(i, e)| e.seq == i as u64 && e.hash_consistent());
                ok.then(|| merkle::root(&entries.iter().map(LedgerEntry::leaf_hash).collect::<Vec<_>>()))
            }
            StateView::Single { entry, proof, count } => {
                if !entry.hash_consistent() {
                    return None;
                }
                merkle::root_from_proof(&entry.leaf_hash(), entry.seq, *count, proof)
            }
            StateView::Head { root, .. } => Some(*root),
        }
    }
}

impl Encode for StateView {
    fn encode(&self, w: &mut Writer) {
        match self {
            StateView::Full(entries) => {
                w.u8(0).list(entries);
            }
            StateView::Single { entry, proof, count } => {
                w.u8(1).put(entry).list(proof).u64(*count);
            }
            StateView::Head { root, count } => {
                w.u8(2).put(root).u64(*count);
            }
        }
    }
}

impl Decode for StateView {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        match r.u8()? {
            0 => Ok(StateView::Full(r.list()?)),
            1 => Ok(StateView::Single { entry: r.get()?, proof: r.list()?, count: r.u64()? }),
            2 => Ok(StateView::Head { root: r.get()?, count: r.u64()? }),
            _ => Err(CodecError::Invalid("state view")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EndorsedResponse {
    pub view: StateView,
    pub endorsements: Vec<Endorsement>,
}

impl Encode for EndorsedResponse {
    fn encode(&self, w: &mut Writer) {
        w.put(&self.view).list(&self.endorsements);
    }
}

impl Decode for EndorsedResponse {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(EndorsedResponse { view: r.get()?, endorsements: r.list()? })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Error)]
pub enum LedgerReject {
    #[error("entries inconsistent with their hashes or proof")]
    InconsistentEntries,
    #[error("endorsement carries a different nonce")]
    Stale,
    #[error("endorsements disagree on the state")]
    Split,
    #[error("endorsement or certificate signature invalid")]
    BadSignature,
    #[error("fewer than read_quorum distinct organizations")]
    UnderQuorum,
}

impl LedgerReject {
    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(t: u8) -> Option<Self> {
        use LedgerReject::*;
        [InconsistentEntries, Stale, Split, BadSignature, UnderQuorum].into_iter().find(|r| r.tag() == t)
    }
}

/// Accepted state: its root and entry count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerifiedState {
    pub root: HashDigest,
    pub count: u64,
}

/// Checks, in order: view consistency, nonce freshness, digest agreement,
/// signatures, and distinct-organization quorum.
pub fn verify_endorsed(
    response: &EndorsedResponse,
    nonce: &[u8; 32],
    org_pks: &[PublicKey],
    read_quorum: usize,
    cache: &mut CertCache,
) -> Result<VerifiedState, LedgerReject> {
    let root = response.view.implied_root().ok_or(LedgerReject::InconsistentEntries)?;
    let count = response.view.count();
    if response.endorsements.iter().any(|e| e.nonce != *nonce) {
        return Err(LedgerReject::Stale);
    }
    let digest = state_digest(&root, count, nonce);
    if response.endorsements.iter().any(|e| e.state_digest != digest) {
        return Err(LedgerReject::Split);
    }
    if response.endorsements.iter().any(|e| !cache.check(&e.cert, org_pks) || !e.signature_valid()) {
        return Err(LedgerReject::BadSignature);
    }
    let orgs: BTreeSet<u32> = response.endorsements.iter().map(Endorsement::org_id).collect();
    if orgs.len() < read_quorum {
        return Err(LedgerReject::UnderQuorum);
    }
    Ok(VerifiedState { root, count })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{derive_rng, generate_keypair, Scheme, SigningKeyPair, SymmetricKey};
    use crate::crypto::aead_encrypt;

    struct Orgs {
        admins: Vec<SigningKeyPair>,
        peers: Vec<(PeerCert, SigningKeyPair)>,
    }

    fn orgs(n: u32) -> Orgs {
        let mut rng = derive_rng(41, "orgs");
        let admins: Vec<SigningKeyPair> = (0..n).map(|_| generate_keypair(Scheme::Admin, &mut rng)).collect();
        let peers = (1..=n)
            .map(|o| {
                let kp = generate_keypair(Scheme::Admin, &mut rng);
                (PeerCert::issue(o, o, kp.public.clone(), &admins[o as usize - 1].secret), kp)
            })
            .collect();
        Orgs { admins, peers }
    }

    fn entries(n: usize) -> Vec<LedgerEntry> {
        let mut rng = derive_rng(42, "entries");
        let key = SymmetricKey::random(&mut rng);
        (0..n).map(|i| LedgerEntry::new(i as u64, EntryKind::Complaint, aead_encrypt(&key, &[i as u8; 20], b"", &mut rng))).collect()
    }

    fn respond(o: &Orgs, signers: &[usize], view: StateView, nonce: [u8; 32]) -> EndorsedResponse {
        let root = view.implied_root().unwrap();
        let d = state_digest(&root, view.count(), &nonce);
        let endorsements = signers.iter().map(|&i| Endorsement::create(&o.peers[i].0, &o.peers[i].1.secret, d, nonce)).collect();
        EndorsedResponse { view, endorsements }
    }

    #[test]
    fn quorum_threshold_and_freshness() {
        let o = orgs(4);
        let pks: Vec<PublicKey> = o.admins.iter().map(|a| a.public.clone()).collect();
        let n1 = [1; 32];
        let resp = respond(&o, &[0, 1, 2], StateView::Full(entries(5)), n1);
        let mut c = CertCache::default();
        assert_eq!(verify_endorsed(&resp, &n1, &pks, 3, &mut c).map(|s| s.count), Ok(5));
        assert_eq!(verify_endorsed(&resp, &n1, &pks, 4, &mut c), Err(LedgerReject::UnderQuorum));
        assert_eq!(verify_endorsed(&resp, &[2; 32], &pks, 3, &mut c), Err(LedgerReject::Stale));
        let mut dup = resp.clone();
        dup.endorsements[2] = dup.endorsements[0].clone();
        assert_eq!(verify_endorsed(&dup, &n1, &pks, 3, &mut c), Err(LedgerReject::UnderQuorum));
    }

    #[test]
    fn split_and_inconsistent_views_are_rejected() {
        let o = orgs(4);
        let pks: Vec<PublicKey> = o.admins.iter().map(|a| a.public.clone()).collect();
        let nonce = [3; 32];
        let long = respond(&o, &[0, 1], StateView::Full(entries(5)), nonce);
        let short = respond(&o, &[2, 3], StateView::Full(entries(4)), nonce);
        let mut mixed = long.clone();
        mixed.endorsements.extend(short.endorsements.clone());
        let mut c = CertCache::default();
        assert_eq!(verify_endorsed(&mixed, &nonce, &pks, 2, &mut c), Err(LedgerReject::Split));
        let mut broken = long.clone();
        if let StateView::Full(e) = &mut broken.view {
            e[2].payload.body[0] ^= 1;
        }
        assert_eq!(verify_endorsed(&broken, &nonce, &pks, 2, &mut c), Err(LedgerReject::InconsistentEntries));
        let mut forged = long.clone();
        forged.endorsements[1].signature.0[0] ^= 1;
        assert_eq!(verify_endorsed(&forged, &nonce, &pks, 2, &mut c), Err(LedgerReject::BadSignature));
    }

    #[test]
    fn single_entry_views_verify_by_proof() {
        let o = orgs(3);
        let pks: Vec<PublicKey> = o.admins.iter().map(|a| a.public.clone()).collect();
        let all = entries(7);
        let leaves: Vec<HashDigest> = all.iter().map(LedgerEntry::leaf_hash).collect();
        let view = StateView::Single { entry: all[4].clone(), proof: merkle::proof(&leaves, 4), count: 7 };
        assert_eq!(view.implied_root(), Some(merkle::root(&leaves)));
        let nonce = [5; 32];
        let resp = respond(&o, &[0, 1], view, nonce);
        assert!(verify_endorsed(&resp, &nonce, &pks, 2, &mut CertCache::default()).is_ok());
        assert_eq!(EndorsedResponse::from_bytes(&resp.to_bytes()).unwrap(), resp);
    }
}
