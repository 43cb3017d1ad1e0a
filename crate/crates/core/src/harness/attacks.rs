//! Adversary drivers: shadow agents, ledger rollback/replay, lease starvation.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::crypto::{derive_rng, HashDigest};
use crate::ledger::{EndorsedResponse, HubStrategy, PeerBehavior, Query, StateView};

use super::cluster::Cluster;
use super::generate::random_text;
use super::run::execute;
use super::scenario::{Action, AgentPlan, ConfigError, Event, ScenarioConfig};

const HOUR: u64 = 3600;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShadowVerdict {
    pub colluding: u32,
    pub k: u32,
    pub ttl: u64,
    pub isolated_at: u64,
    pub locked_out_at: Option<u64>,
    pub within_ttl: bool,
}

fn two_agent_cluster(name: &str, n: u32, k: u32, seed: u64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::baseline(n, k, 2, seed);
    cfg.name = name.into();
    cfg.agents = vec![AgentPlan::new(1, "leader+writer+scanner"), AgentPlan::new(2, "writer+scanner")];
    cfg.lease_ttl_seconds = 4 * HOUR;
    cfg.tick_seconds = 300;
    cfg.scan_period_seconds = 0;
    cfg
}

/// The first `colluding` administrators keep serving agent 2 after it is cut off from the rest.
pub fn shadow_agent_attack(seed: u64, n: u32, k: u32, colluding: u32) -> Result<ShadowVerdict, ConfigError> {
    let mut cfg = two_agent_cluster("shadow", n, k, seed);
    let isolated_at = 5 * HOUR + 900;
    cfg.corrupt_admins = (1..=colluding.min(n)).collect();
    cfg.schedule = vec![Event { at: isolated_at, action: Action::Isolate { agent: 2 } }];
    cfg.duration_seconds = Some(isolated_at + 2 * cfg.lease_ttl_seconds + HOUR);
    let ttl = cfg.lease_ttl_seconds;
    let cluster = execute(&cfg)?;
    let locked_out_at = cluster.lockouts.first().and_then(|l| l.2);
    Ok(ShadowVerdict {
        colluding,
        k,
        ttl,
        isolated_at,
        locked_out_at,
        within_ttl: locked_out_at.is_some_and(|t| t <= isolated_at + ttl),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StarveVerdict {
    pub refusing: u32,
    pub n: u32,
    pub k: u32,
    pub ttl: u64,
    pub locked_out_at: Option<u64>,
}

/// The first `refusing` administrators stop renewing after inception.
pub fn starve_attack(seed: u64, n: u32, k: u32, refusing: u32) -> Result<StarveVerdict, ConfigError> {
    let mut cfg = two_agent_cluster("starve", n, k, seed);
    cfg.agents.truncate(1);
    cfg.refusing_admins = (1..=refusing.min(n)).collect();
    let ttl = cfg.lease_ttl_seconds;
    let mut cluster = Cluster::new(cfg.clone())?;
    cluster.inception().map_err(ConfigError::Invalid)?;
    let mut locked_out_at = None;
    let step = cfg.tick_seconds;
    for m in 1..=(3 * ttl / step) {
        let t = m * step;
        cluster.advance_to(t);
        cluster.tick_all();
        if t.is_multiple_of(ttl / 4) {
            cluster.renew_all();
        }
        if !cluster.is_leased(0) {
            locked_out_at = Some(t);
            break;
        }
    }
    Ok(StarveVerdict { refusing, n, k, ttl, locked_out_at })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RollbackVerdict {
    pub corrupt: u32,
    pub read_quorum: u32,
    pub acked: usize,
    pub gets: usize,
    pub accepted_gets: usize,
    /// Accepted GETs that omit an acked entry.
    pub accepted_missing_acked: usize,
    pub replays: usize,
    pub replays_accepted: usize,
}

impl RollbackVerdict {
    pub fn pass(&self) -> bool {
        self.accepted_missing_acked == 0 && self.replays_accepted == 0
    }
}

fn excludes(view: &StateView, acked: &[(u64, HashDigest)]) -> bool {
    match view {
        StateView::Full(entries) => acked.iter().any(|(_, p)| !entries.iter().any(|e| e.payload_hash == *p)),
        other => acked.iter().any(|(seq, _)| *seq >= other.count()),
    }
}

/// Honest ledger while complaints are acked, then `corrupt` organizations roll back
/// and every hub strategy and stale response replay is tried against agent-side verification.
pub fn rollback_attack(seed: u64, n: u32, k: u32, read_quorum: u32, corrupt: u32) -> Result<RollbackVerdict, ConfigError> {
    let mut rng = derive_rng(seed, "rollback");
    let mut cfg = ScenarioConfig::baseline(n, k, 1, seed);
    cfg.name = "rollback".into();
    cfg.read_quorum = Some(read_quorum);
    cfg.tick_seconds = 0;
    cfg.scan_period_seconds = 0;
    cfg.lease_ttl_seconds = 30 * 86_400;
    let mut cluster = Cluster::new(cfg)?;
    cluster.inception().map_err(ConfigError::Invalid)?;

    let mut stale: Vec<EndorsedResponse> = Vec::new();
    let mut acked: Vec<(u64, HashDigest)> = Vec::new();
    for i in 0..rng.gen_range(3..=8) {
        cluster.advance_to(60 * (i + 1));
        let body = random_text(&mut rng, 24);
        let before = cluster.acked_payloads().len();
        cluster.submit(&format!("perp-{}", rng.gen_range(0..3)), &format!("user-{i}"), &body, None);
        let after = cluster.acked_payloads();
        if after.len() > before {
            let seq = cluster.ledger.committed_len() - 1;
            acked.push((seq, after[after.len() - 1]));
        }
        let nonce: [u8; 32] = rng.gen();
        if let Ok(r) = cluster.ledger.get("observer", nonce, Query::All) {
            stale.push(r);
        }
    }

    let mut orgs: Vec<u32> = (1..=n).collect();
    orgs.shuffle(&mut rng);
    let cut = rng.gen_range(0..acked.len().max(1)) as u64;
    for &org in &orgs[..corrupt.min(n) as usize] {
        let b = if corrupt >= read_quorum {
            PeerBehavior::Rollback { truncate_to: cut }
        } else {
            *[PeerBehavior::Rollback { truncate_to: cut }, PeerBehavior::Equivocate, PeerBehavior::Drop]
                .choose(&mut rng)
                .expect("non-empty")
        };
        cluster.ledger.set_behavior(org, b);
    }

    let mut v = RollbackVerdict {
        corrupt,
        read_quorum,
        acked: acked.len(),
        gets: 0,
        accepted_gets: 0,
        accepted_missing_acked: 0,
        replays: 0,
        replays_accepted: 0,
    };
    for hub in [HubStrategy::Honest, HubStrategy::ShortestState, HubStrategy::Mix, HubStrategy::Replay] {
        cluster.ledger.set_hub_strategy(hub);
        for query in [Query::All, Query::Head] {
            let nonce: [u8; 32] = rng.gen();
            v.gets += 1;
            let Ok(resp) = cluster.ledger.get("observer", nonce, query) else { continue };
            if cluster.verify_response(&resp, &nonce).is_ok() {
                v.accepted_gets += 1;
                if excludes(&resp.view, &acked) {
                    v.accepted_missing_acked += 1;
                }
            }
        }
    }
    for old in &stale {
        let nonce: [u8; 32] = rng.gen();
        v.replays += 1;
        if cluster.verify_response(old, &nonce).is_ok() {
            v.replays_accepted += 1;
        }
    }
    Ok(v)
}
