//! Discrete-event execution of a scenario and its machine-readable result.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::admin::Role;
use crate::trace::{scan_for_secrets, SecretHit, MIN_SECRET_LEN};

use super::cluster::{Cluster, EventLine};
use super::oracle;
use super::scenario::{Action, ConfigError, ScenarioConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceVerdict {
    pub records: usize,
    pub bytes: usize,
    pub secrets_registered: usize,
    /// Registered secrets per label.
    pub secret_labels: BTreeMap<String, usize>,
    pub secret_hits: Vec<SecretHit>,
    pub unmatched_body_hits: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeerDigest {
    pub org: u32,
    pub entries: u64,
    pub root: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub at: u64,
    pub agent: u32,
    /// `(perpetrator digest, complaint count)`.
    pub matches: Vec<(String, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LockoutVerdict {
    pub agent: u32,
    pub isolated_at: u64,
    pub locked_out_at: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunResult {
    pub name: String,
    pub seed: u64,
    pub events: Vec<EventLine>,
    pub submitted: usize,
    pub acked: usize,
    pub trace: TraceVerdict,
    pub ledger: Vec<PeerDigest>,
    pub authority: Vec<ReportSummary>,
    pub lockouts: Vec<LockoutVerdict>,
    pub match_discrepancies: Vec<oracle::Discrepancy>,
    pub properties: BTreeMap<String, bool>,
}

impl RunResult {
    pub fn all_pass(&self) -> bool {
        self.properties.values().all(|v| *v)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Job {
    User(usize),
    Tick,
    Renew,
    Scan,
}

/// Fixed total order: time, then user events in file order, ticks, renewals, scans.
fn schedule(cfg: &ScenarioConfig) -> Vec<(u64, Job)> {
    let end = cfg.duration();
    let mut jobs: Vec<(u64, Job)> = cfg.schedule.iter().enumerate().map(|(i, e)| (e.at, Job::User(i))).collect();
    let every = |period: u64, job: Job, jobs: &mut Vec<(u64, Job)>| {
        if let Some(count) = end.checked_div(period) {
            jobs.extend((1..=count).map(|m| (m * period, job.clone())));
        }
    };
    every(cfg.tick_seconds, Job::Tick, &mut jobs);
    if cfg.tick_seconds > 0 {
        every((cfg.lease_ttl_seconds / 4).max(1), Job::Renew, &mut jobs);
    }
    every(cfg.scan_period_seconds, Job::Scan, &mut jobs);
    jobs.sort();
    jobs
}

fn apply(cluster: &mut Cluster, action: &Action) {
    let idx = |c: &Cluster, m: u32| c.index_of(m).expect("validated machine id");
    match action {
        Action::Submit { perp, user, body, agent } => {
            cluster.submit(perp, user, body, *agent);
        }
        Action::Scan { agent } => {
            let _ = cluster.scan(*agent);
        }
        Action::Isolate { agent } => {
            let i = idx(cluster, *agent);
            cluster.isolate(i);
        }
        Action::Heal { agent } => {
            let i = idx(cluster, *agent);
            cluster.heal(i);
        }
        Action::Reboot { agent } => {
            let i = idx(cluster, *agent);
            cluster.reboot(i);
        }
        Action::Recover { agent } => {
            let i = idx(cluster, *agent);
            let _ = cluster.recover(i);
        }
        Action::Revive { agent, role } => {
            let i = idx(cluster, *agent);
            cluster.revive(i, role.as_deref().and_then(Role::parse));
        }
        Action::Kill { agent } => {
            let i = idx(cluster, *agent);
            cluster.kill(i);
        }
        Action::Corrupt { org, behavior } => cluster.ledger.set_behavior(*org, *behavior),
        Action::Hub { strategy } => cluster.ledger.set_hub_strategy(*strategy),
    }
}

/// Builds the cluster, runs inception and every scheduled job; returns the final world.
pub fn execute(cfg: &ScenarioConfig) -> Result<Cluster, ConfigError> {
    let mut cluster = Cluster::new(cfg.clone())?;
    if cluster.inception().is_err() {
        return Ok(cluster);
    }
    for (at, job) in schedule(cfg) {
        cluster.advance_to(at);
        match job {
            Job::User(i) => apply(&mut cluster, &cfg.schedule[i].action),
            Job::Tick => {
                cluster.tick_all();
                cluster.probe_lockouts();
            }
            Job::Renew => {
                cluster.renew_all();
                cluster.probe_lockouts();
            }
            Job::Scan => {
                let _ = cluster.scan(None);
            }
        }
    }
    Ok(cluster)
}

/// Evaluates every property over a finished cluster.
pub fn summarize(cluster: &mut Cluster) -> RunResult {
    let cfg = cluster.cfg.clone();
    let records = cluster.trace.snapshot();
    let secrets = cluster.registry.secrets();
    let secret_hits = scan_for_secrets(&records, &secrets);
    let unmatched: Vec<(String, Vec<u8>)> = oracle::unmatched_bodies(&cluster.history)
        .into_iter()
        .filter(|b| b.len() >= MIN_SECRET_LEN)
        .map(|b| ("unmatched_body".to_string(), b.into_bytes()))
        .collect();
    let unmatched_body_hits = scan_for_secrets(&records, &unmatched).len();
    let unmatched_set: Vec<Vec<u8>> = unmatched.iter().map(|(_, b)| b.clone()).collect();
    let leaked_to_authority = cluster
        .authority
        .matches()
        .iter()
        .flat_map(|m| m.complaints.iter())
        .filter(|c| unmatched_set.contains(&c.body))
        .count();
    let discrepancies = oracle::compare(&cluster.history);
    let inception_ok = cluster.events.iter().any(|e| e.event == "inception" && e.outcome == "ok");

    let acked = cluster.acked_payloads();
    let immutability = match cluster.verified_view() {
        Ok(view) => acked.iter().all(|p| view.contains(p)),
        Err(_) => true,
    };
    let digests = cluster.key_digests();
    let key_agreement = !digests.is_empty() && digests.iter().all(|(_, d)| *d == digests[0].1);
    let ttl = cfg.lease_ttl_seconds;
    let lockouts: Vec<LockoutVerdict> = cluster
        .lockouts
        .iter()
        .map(|&(i, at, locked)| LockoutVerdict { agent: cluster.machines[i], isolated_at: at, locked_out_at: locked })
        .collect();
    let shadow_lockout = lockouts.iter().all(|l| l.locked_out_at.is_some_and(|t| t <= l.isolated_at + ttl));

    let mut properties = BTreeMap::new();
    properties.insert("inception".to_string(), inception_ok);
    properties.insert("match-functionality".to_string(), inception_ok && discrepancies.is_empty());
    properties.insert("non-match-functionality".to_string(), unmatched_body_hits == 0 && leaked_to_authority == 0);
    properties.insert("secrecy".to_string(), secret_hits.is_empty());
    properties.insert("immutability".to_string(), immutability);
    properties.insert("key-agreement".to_string(), key_agreement);
    if !lockouts.is_empty() {
        properties.insert("shadow-lockout".to_string(), shadow_lockout);
    }

    RunResult {
        name: cfg.name.clone(),
        seed: cfg.seed,
        events: cluster.events.clone(),
        submitted: cluster.submissions.len(),
        acked: cluster.submissions.iter().filter(|s| s.acked).count(),
        trace: TraceVerdict {
            records: records.len(),
            bytes: records.iter().map(|r| r.frame.len()).sum(),
            secrets_registered: secrets.len(),
            secret_labels: secrets.iter().fold(BTreeMap::new(), |mut m, (l, _)| {
                *m.entry(l.clone()).or_default() += 1;
                m
            }),
            secret_hits,
            unmatched_body_hits,
        },
        ledger: cluster
            .ledger
            .digests()
            .into_iter()
            .map(|(org, entries, root)| PeerDigest { org, entries, root: root.to_hex() })
            .collect(),
        authority: cluster
            .reports
            .iter()
            .map(|r| ReportSummary {
                at: r.at,
                agent: r.agent,
                matches: r.matches.iter().map(|m| (m.perpetrator_id.to_hex(), m.complaints.len())).collect(),
            })
            .collect(),
        lockouts,
        match_discrepancies: discrepancies,
        properties,
    }
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunResult, ConfigError> {
    let mut cluster = execute(cfg)?;
    Ok(summarize(&mut cluster))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idle_cluster_passes_and_round_trips() {
        let mut cfg = ScenarioConfig::baseline(3, 2, 1, 5);
        cfg.duration_seconds = Some(3600);
        let r = run_scenario(&cfg).unwrap();
        assert!(r.all_pass(), "{}", r.to_json());
        assert_eq!((r.submitted, r.acked), (0, 0));
        assert_eq!(RunResult::from_json(&r.to_json()).unwrap().to_json(), r.to_json());
    }
}
