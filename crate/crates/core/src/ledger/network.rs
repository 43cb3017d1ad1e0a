//! Client hub, sequencer and peers wired through the traced bus.
//!
//! The hub and sequencer are untrusted: every message they relay is recorded,
//! and only enclave-side [`super::verify_endorsed`] decides what is accepted.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bus::Bus;
use crate::codec::Encode;
use crate::crypto::{generate_keypair, Ciphertext, HashDigest, PublicKey, Scheme, SigningKeyPair, SimRng};
use crate::trace::{Channel, Trace};

use super::wire::WireMsg;
use super::{payload_hash, EndorsedResponse, EntryKind, LedgerEntry, Peer, PeerBehavior, PeerCert, Query};

pub const HUB: &str = "ledger-hub";

/// What the (untrusted) client hub returns to a GET.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum HubStrategy {
    /// The state backed by the most organizations.
    #[default]
    Honest,
    /// The state with the fewest entries among responders.
    ShortestState,
    /// The oldest response it has ever relayed, regardless of the request nonce.
    Replay,
    /// The first group's view with every responder's endorsements attached.
    Mix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("ledger quorum unreachable")]
pub struct QuorumUnreachable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateReceipt {
    pub committed: bool,
    pub seq: Option<u64>,
    pub approvals: usize,
}

pub fn peer_name(org_id: u32) -> String {
    format!("peer-{org_id}")
}

#[derive(Debug)]
pub struct LedgerNetwork {
    peers: Vec<Peer>,
    bus: Bus,
    hub: HubStrategy,
    next_seq: u64,
    censor: bool,
    read_quorum: usize,
    org_pks: Vec<PublicKey>,
    relayed: Vec<EndorsedResponse>,
}

impl LedgerNetwork {
    /// One peer per organization; peer `i` is certified by `org_keys[i]` and has `peer_id == org_id`.
    pub fn new(org_keys: &[SigningKeyPair], read_quorum: usize, trace: Trace, rng: &mut SimRng) -> Self {
        let org_pks: Vec<PublicKey> = org_keys.iter().map(|k| k.public.clone()).collect();
        let peers = org_keys
            .iter()
            .enumerate()
            .map(|(i, org)| {
                let id = i as u32 + 1;
                let kp = generate_keypair(Scheme::Admin, rng);
                let cert = PeerCert::issue(id, id, kp.public.clone(), &org.secret);
                Peer::new(cert, kp, org_pks.clone(), read_quorum)
            })
            .collect();
        LedgerNetwork {
            peers,
            bus: Bus::new(trace),
            hub: HubStrategy::Honest,
            next_seq: 0,
            censor: false,
            read_quorum,
            org_pks,
            relayed: Vec::new(),
        }
    }

    /// Attaches `peer-<org>.log` file stores under `dir`.
    pub fn with_stores(mut self, dir: &Path) -> std::io::Result<Self> {
        let peers = std::mem::take(&mut self.peers);
        for p in peers {
            let path = dir.join(format!("{}.log", peer_name(p.org_id())));
            self.peers.push(p.with_store(path)?);
        }
        self.next_seq = self.peers.iter().map(Peer::len).max().unwrap_or(0);
        Ok(self)
    }

    pub fn org_pks(&self) -> &[PublicKey] {
        &self.org_pks
    }

    pub fn read_quorum(&self) -> usize {
        self.read_quorum
    }

    pub fn peers(&self) -> &[Peer] {
        &self.peers
    }

    pub fn peer_mut(&mut self, org_id: u32) -> Option<&mut Peer> {
        self.peers.iter_mut().find(|p| p.org_id() == org_id)
    }

    pub fn set_behavior(&mut self, org_id: u32, behavior: PeerBehavior) {
        if let Some(p) = self.peer_mut(org_id) {
            p.set_behavior(behavior);
        }
    }

    pub fn set_hub_strategy(&mut self, hub: HubStrategy) {
        self.hub = hub;
    }

    pub fn hub_strategy(&self) -> HubStrategy {
        self.hub
    }

    /// A censoring sequencer drops every proposal.
    pub fn set_censor(&mut self, censor: bool) {
        self.censor = censor;
    }

    pub fn bus(&self) -> &Bus {
        &self.bus
    }

    pub fn bus_mut(&mut self) -> &mut Bus {
        &mut self.bus
    }

    /// Number of entries the sequencer has committed.
    pub fn committed_len(&self) -> u64 {
        self.next_seq
    }

    /// Final `(org_id, entry count, root)` of each peer.
    pub fn digests(&self) -> Vec<(u32, u64, HashDigest)> {
        self.peers.iter().map(|p| (p.org_id(), p.len(), p.root())).collect()
    }

    fn send(&mut self, from: &str, to: &str, msg: &WireMsg) -> bool {
        self.bus.send(from, to, msg.name(), msg.to_frame())
    }

    /// Proposes an already-encrypted entry; commits it iff `read_quorum` organizations approve.
    pub fn update(&mut self, from: &str, kind: EntryKind, payload: Ciphertext) -> UpdateReceipt {
        let propose = WireMsg::Propose { kind, payload: payload.clone() };
        if !self.send(from, HUB, &propose) {
            return UpdateReceipt { committed: false, seq: None, approvals: 0 };
        }
        let ph = payload_hash(&payload);
        let mut approvals = Vec::new();
        for i in 0..self.peers.len() {
            let name = peer_name(self.peers[i].org_id());
            if !self.send(HUB, &name, &propose) {
                continue;
            }
            if let Some(a) = self.peers[i].on_propose(kind, &ph) {
                let msg = WireMsg::Endorse(a);
                if self.send(&name, HUB, &msg) {
                    if let WireMsg::Endorse(a) = msg {
                        approvals.push(a);
                    }
                }
            }
        }
        let orgs = approvals.iter().map(|a| a.cert.org_id).collect::<std::collections::BTreeSet<_>>().len();
        if self.censor || orgs < self.read_quorum {
            return UpdateReceipt { committed: false, seq: None, approvals: orgs };
        }
        let entry = LedgerEntry::new(self.next_seq, kind, payload);
        let commit = WireMsg::Commit { entry: entry.clone(), endorsements: approvals };
        let WireMsg::Commit { endorsements, .. } = &commit else { unreachable!() };
        for i in 0..self.peers.len() {
            let name = peer_name(self.peers[i].org_id());
            if self.send(HUB, &name, &commit) {
                self.peers[i].on_commit(&entry, endorsements);
            }
        }
        self.next_seq += 1;
        UpdateReceipt { committed: true, seq: Some(entry.seq), approvals: orgs }
    }

    /// Fans a nonce-bound GET out to every peer and assembles a response per the hub strategy.
    pub fn get(&mut self, from: &str, nonce: [u8; 32], query: Query) -> Result<EndorsedResponse, QuorumUnreachable> {
        let msg = WireMsg::Get { nonce, query };
        if !self.send(from, HUB, &msg) {
            return Err(QuorumUnreachable);
        }
        let mut replies = Vec::new();
        for i in 0..self.peers.len() {
            let name = peer_name(self.peers[i].org_id());
            if !self.send(HUB, &name, &msg) {
                continue;
            }
            if let Some(r) = self.peers[i].on_get(&nonce, query) {
                if self.peers[i].behavior() == PeerBehavior::LeakView {
                    self.bus.trace().record(Channel::Disk { path: format!("{name}/leaked-view") }, r.view.to_frame());
                }
                let reply = WireMsg::Response(r);
                if self.send(&name, HUB, &reply) {
                    if let WireMsg::Response(r) = reply {
                        replies.push(r);
                    }
                }
            }
        }
        let response = self.assemble(replies)?;
        self.relayed.push(response.clone());
        let out = WireMsg::Response(response);
        if !self.send(HUB, from, &out) {
            return Err(QuorumUnreachable);
        }
        let WireMsg::Response(response) = out else { unreachable!() };
        Ok(response)
    }

    fn assemble(&self, replies: Vec<EndorsedResponse>) -> Result<EndorsedResponse, QuorumUnreachable> {
        if self.hub == HubStrategy::Replay {
            if let Some(old) = self.relayed.first() {
                return Ok(old.clone());
            }
        }
        // Group by endorsed digest, keeping first-seen order for determinism.
        let mut groups: BTreeMap<usize, (HashDigest, EndorsedResponse)> = BTreeMap::new();
        let mut index: Vec<HashDigest> = Vec::new();
        for r in replies {
            let d = r.endorsements[0].state_digest;
            match index.iter().position(|x| *x == d) {
                Some(i) => groups.get_mut(&i).unwrap().1.endorsements.extend(r.endorsements),
                None => {
                    groups.insert(index.len(), (d, r));
                    index.push(d);
                }
            }
        }
        let groups: Vec<EndorsedResponse> = groups.into_values().map(|(_, r)| r).collect();
        let orgs = |r: &EndorsedResponse| r.endorsements.iter().map(|e| e.org_id()).collect::<std::collections::BTreeSet<_>>().len();
        match self.hub {
            HubStrategy::Honest | HubStrategy::Replay => {
                let best = groups.into_iter().max_by_key(|g| (orgs(g), g.view.count())).ok_or(QuorumUnreachable)?;
                if orgs(&best) < self.read_quorum {
                    return Err(QuorumUnreachable);
                }
                Ok(best)
            }
            HubStrategy::ShortestState => groups.into_iter().min_by_key(|g| g.view.count()).ok_or(QuorumUnreachable),
            HubStrategy::Mix => {
                let mut it = groups.into_iter();
                let mut first = it.next().ok_or(QuorumUnreachable)?;
                for g in it {
                    first.endorsements.extend(g.endorsements);
                }
                Ok(first)
            }
        }
    }
}
