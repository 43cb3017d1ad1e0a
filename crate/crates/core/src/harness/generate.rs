//! Seeded random scenarios for the randomized suites.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::crypto::derive_rng;
use crate::ledger::PeerBehavior;

use super::scenario::{Action, AgentPlan, Corruption, Event, ScenarioConfig};

#[derive(Debug, Clone)]
pub struct GenParams {
    pub n: u32,
    pub k: u32,
    pub read_quorum: u32,
    pub max_complaints: usize,
    /// Corrupt organizations are drawn from `0..=max_corrupt`.
    pub max_corrupt: u32,
    pub max_scans: usize,
    pub span_seconds: u64,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams { n: 4, k: 3, read_quorum: 3, max_complaints: 200, max_corrupt: 1, max_scans: 6, span_seconds: 3 * 86_400 }
    }
}

const ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";

pub fn random_text(rng: &mut impl Rng, len: usize) -> String {
    (0..len).map(|_| *ALPHABET.choose(rng).expect("non-empty") as char).collect()
}

/// Randomly re-cased and padded spelling of an ASCII identifier.
fn spelling(rng: &mut impl Rng, id: &str) -> String {
    let body: String =
        id.chars().map(|c| if rng.gen_bool(0.3) { c.to_ascii_uppercase() } else { c }).collect();
    let pad = |rng: &mut _| if Rng::gen_bool(rng, 0.2) { " " } else { "" };
    format!("{}{body}{}", pad(rng), pad(rng))
}

fn behavior(rng: &mut impl Rng, max_len: usize) -> PeerBehavior {
    match rng.gen_range(0..4) {
        0 => PeerBehavior::Drop,
        1 => PeerBehavior::Rollback { truncate_to: rng.gen_range(0..=max_len as u64) },
        2 => PeerBehavior::Equivocate,
        _ => PeerBehavior::LeakView,
    }
}

/// Complaints at random times and a random scan schedule, always ending in a final scan.
pub fn random_scenario(seed: u64, p: &GenParams) -> ScenarioConfig {
    let mut rng = derive_rng(seed, "generate");
    let complaints = rng.gen_range(1..=p.max_complaints);
    let perps = rng.gen_range(1..=(complaints / 3).max(2));
    let users = rng.gen_range(2..=(complaints / 2).max(3));
    let mut schedule: Vec<Event> = (0..complaints)
        .map(|i| {
            let at = rng.gen_range(1..p.span_seconds);
            let perp = format!("perp-{}", rng.gen_range(0..perps));
            let user = format!("user-{}", rng.gen_range(0..users));
            let len = rng.gen_range(8..40);
            Event {
                at,
                action: Action::Submit {
                    perp: spelling(&mut rng, &perp),
                    user: spelling(&mut rng, &user),
                    body: format!("{i:04}-{}", random_text(&mut rng, len)),
                    agent: None,
                },
            }
        })
        .collect();
    for _ in 0..rng.gen_range(0..=p.max_scans) {
        schedule.push(Event { at: rng.gen_range(1..p.span_seconds), action: Action::Scan { agent: None } });
    }
    schedule.push(Event { at: p.span_seconds, action: Action::Scan { agent: None } });
    schedule.sort_by_key(|e| e.at);

    let mut orgs: Vec<u32> = (1..=p.n).collect();
    orgs.shuffle(&mut rng);
    let corrupt = rng.gen_range(0..=p.max_corrupt) as usize;
    let corruption =
        orgs[..corrupt].iter().map(|&org| Corruption { org, behavior: behavior(&mut rng, complaints) }).collect();

    let mut cfg = ScenarioConfig::baseline(p.n, p.k, 2, seed);
    cfg.name = format!("random-{seed}");
    cfg.read_quorum = Some(p.read_quorum);
    cfg.agents = vec![AgentPlan::new(1, "leader+writer+scanner"), AgentPlan::new(2, "writer+scanner")];
    cfg.lease_ttl_seconds = 30 * 86_400;
    cfg.scan_period_seconds = 0;
    cfg.tick_seconds = 0;
    cfg.duration_seconds = Some(p.span_seconds);
    cfg.corruption = corruption;
    cfg.schedule = schedule;
    cfg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_seed_determined_and_valid() {
        let p = GenParams::default();
        let a = random_scenario(5, &p);
        assert_eq!(a, random_scenario(5, &p));
        assert_ne!(a, random_scenario(6, &p));
        a.validate().unwrap();
        assert!(a.corrupt_orgs() <= 1);
        assert!(matches!(a.schedule.last().unwrap().action, Action::Scan { .. }));
    }
}
