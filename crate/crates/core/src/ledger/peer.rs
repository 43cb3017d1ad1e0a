//! A ledger peer: one organization's replica, endorsing states under its certified key.

use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::codec::{Decode, Encode, Reader};
use crate::crypto::{HashDigest, PublicKey, SigningKeyPair};

use super::{
    merkle, proposal_digest, proposal_quorum, state_digest, CertCache, Endorsement, EndorsedResponse, EntryKind,
    LedgerEntry, PeerCert, ProposalEndorsement, Query, StateView,
};

/// Adversarial behaviors of a corrupted organization's peer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "behavior")]
pub enum PeerBehavior {
    #[default]
    Honest,
    /// Ignores every message.
    Drop,
    /// Keeps appending but serves and endorses only the first `truncate_to` entries.
    Rollback { truncate_to: u64 },
    /// Omits the newest entry for requests whose nonce has an odd first byte.
    Equivocate,
    /// Honest, but the operator copies every served view to the admin-visible channel.
    LeakView,
}

impl PeerBehavior {
    pub fn name(&self) -> &'static str {
        match self {
            PeerBehavior::Honest => "honest",
            PeerBehavior::Drop => "drop",
            PeerBehavior::Rollback { .. } => "rollback",
            PeerBehavior::Equivocate => "equivocate",
            PeerBehavior::LeakView => "leak-view",
        }
    }

    pub fn is_honest(&self) -> bool {
        matches!(self, PeerBehavior::Honest)
    }
}

#[derive(Debug)]
pub struct Peer {
    cert: PeerCert,
    keypair: SigningKeyPair,
    org_pks: Vec<PublicKey>,
    commit_quorum: usize,
    entries: Vec<LedgerEntry>,
    leaves: Vec<HashDigest>,
    behavior: PeerBehavior,
    cache: CertCache,
    store: Option<PathBuf>,
}

impl Peer {
    pub fn new(cert: PeerCert, keypair: SigningKeyPair, org_pks: Vec<PublicKey>, commit_quorum: usize) -> Self {
        Peer {
            cert,
            keypair,
            org_pks,
            commit_quorum,
            entries: Vec::new(),
            leaves: Vec::new(),
            behavior: PeerBehavior::Honest,
            cache: CertCache::default(),
            store: None,
        }
    }

    /// Attaches a file-backed append log, loading any entries it already holds.
    pub fn with_store(mut self, path: PathBuf) -> io::Result<Self> {
        if path.exists() {
            let data = fs::read(&path)?;
            let mut r = Reader::new(&data);
            while r.remaining() > 0 {
                let rec = r.bytes().map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
                let entry = LedgerEntry::from_bytes(rec).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
                if entry.seq != self.entries.len() as u64 {
                    return Err(io::Error::new(io::ErrorKind::InvalidData, "non-contiguous seq in peer store"));
                }
                self.push(entry);
            }
        }
        self.store = Some(path);
        Ok(self)
    }

    pub fn org_id(&self) -> u32 {
        self.cert.org_id
    }

    pub fn cert(&self) -> &PeerCert {
        &self.cert
    }

    pub fn behavior(&self) -> PeerBehavior {
        self.behavior
    }

    pub fn set_behavior(&mut self, behavior: PeerBehavior) {
        self.behavior = behavior;
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn len(&self) -> u64 {
        self.entries.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn root(&self) -> HashDigest {
        merkle::root(&self.leaves)
    }

    fn push(&mut self, entry: LedgerEntry) {
        self.leaves.push(entry.leaf_hash());
        self.entries.push(entry);
    }

    fn persist(&self, entry: &LedgerEntry) -> io::Result<()> {
        if let Some(path) = &self.store {
            let body = entry.to_bytes();
            let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
            f.write_all(&(body.len() as u32).to_be_bytes())?;
            f.write_all(&body)?;
        }
        Ok(())
    }

    fn rewrite_store(&self) -> io::Result<()> {
        if let Some(path) = &self.store {
            let mut out = Vec::new();
            for e in &self.entries {
                let body = e.to_bytes();
                out.extend_from_slice(&(body.len() as u32).to_be_bytes());
                out.extend_from_slice(&body);
            }
            fs::write(path, out)?;
        }
        Ok(())
    }

    /// Physically discards every entry at or after `len` (operator tampering).
    pub fn truncate(&mut self, len: u64) -> io::Result<()> {
        let len = len.min(self.len()) as usize;
        self.entries.truncate(len);
        self.leaves.truncate(len);
        self.rewrite_store()
    }

    pub fn on_propose(&mut self, kind: EntryKind, payload_hash: &HashDigest) -> Option<ProposalEndorsement> {
        if self.behavior == PeerBehavior::Drop {
            return None;
        }
        Some(ProposalEndorsement::create(&self.cert, &self.keypair.secret, proposal_digest(kind, payload_hash)))
    }

    /// Appends iff the entry is next in sequence, hash-consistent and approved by a quorum.
    pub fn on_commit(&mut self, entry: &LedgerEntry, endorsements: &[ProposalEndorsement]) -> bool {
        if self.behavior == PeerBehavior::Drop || entry.seq != self.len() || !entry.hash_consistent() {
            return false;
        }
        let proposal = proposal_digest(entry.kind, &entry.payload_hash);
        if proposal_quorum(endorsements, &proposal, &self.org_pks, &mut self.cache) < self.commit_quorum {
            return false;
        }
        if self.persist(entry).is_err() {
            return false;
        }
        self.push(entry.clone());
        true
    }

    fn served_len(&self, nonce: &[u8; 32]) -> usize {
        let n = self.entries.len();
        match self.behavior {
            PeerBehavior::Rollback { truncate_to } => n.min(truncate_to as usize),
            PeerBehavior::Equivocate if nonce[0] & 1 == 1 => n.saturating_sub(1),
            _ => n,
        }
    }

    /// This peer's view and endorsement for one GET, or `None` if it stays silent.
    pub fn on_get(&self, nonce: &[u8; 32], query: Query) -> Option<EndorsedResponse> {
        if self.behavior == PeerBehavior::Drop {
            return None;
        }
        let len = self.served_len(nonce);
        let leaves = &self.leaves[..len];
        let root = merkle::root(leaves);
        let view = match query {
            Query::All => StateView::Full(self.entries[..len].to_vec()),
            Query::BySeq(s) if (s as usize) < len => StateView::Single {
                entry: self.entries[s as usize].clone(),
                proof: merkle::proof(leaves, s as usize),
                count: len as u64,
            },
            Query::BySeq(_) | Query::Head => StateView::Head { root, count: len as u64 },
        };
        let digest = state_digest(&root, len as u64, nonce);
        let endorsement = Endorsement::create(&self.cert, &self.keypair.secret, digest, *nonce);
        Some(EndorsedResponse { view, endorsements: vec![endorsement] })
    }
}
