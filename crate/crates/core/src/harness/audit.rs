//! Secrecy audits: registered-secret scans and paired-run structural comparison.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::crypto::derive_rng;
use crate::trace::{scan_for_secrets, structural_diff};

use super::generate::random_text;
use super::run::{execute, RunResult};
use super::scenario::{Action, ConfigError, ScenarioConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecretVerdict {
    pub label: String,
    pub hits: usize,
    pub pass: bool,
}

/// Per registered-secret label, from a finished run's trace verdict.
pub fn secrecy_audit(result: &RunResult) -> Vec<SecretVerdict> {
    let mut by_label: BTreeMap<String, usize> = BTreeMap::new();
    for h in &result.trace.secret_hits {
        *by_label.entry(h.label.clone()).or_default() += 1;
    }
    let mut out: Vec<SecretVerdict> = result
        .trace
        .secret_labels
        .keys()
        .chain(by_label.keys().filter(|l| !result.trace.secret_labels.contains_key(*l)))
        .map(|label| {
            let hits = by_label.get(label).copied().unwrap_or(0);
            SecretVerdict { label: label.clone(), hits, pass: hits == 0 }
        })
        .collect();
    out.push(SecretVerdict {
        label: "unmatched_body".into(),
        hits: result.trace.unmatched_body_hits,
        pass: result.trace.unmatched_body_hits == 0,
    });
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairedVerdict {
    pub replaced_event: usize,
    pub divergence: Option<String>,
    pub secret_hits: usize,
    pub pass: bool,
}

/// Copy of `cfg` whose `event`-th schedule entry carries a random body of equal length.
pub fn with_random_body(cfg: &ScenarioConfig, event: usize, seed: u64) -> ScenarioConfig {
    let mut alt = cfg.clone();
    if let Action::Submit { body, .. } = &mut alt.schedule[event].action {
        let mut rng = derive_rng(seed, "paired-body");
        let len = body.len();
        let mut fresh = random_text(&mut rng, len);
        while fresh == *body {
            fresh = random_text(&mut rng, len);
        }
        *body = fresh;
    }
    alt
}

/// Runs `cfg` and its single-body variant; admin-visible traces must match outside opaque fields.
pub fn paired_secrecy(cfg: &ScenarioConfig, event: usize, seed: u64) -> Result<PairedVerdict, ConfigError> {
    let alt = with_random_body(cfg, event, seed);
    let left = execute(cfg)?;
    let right = execute(&alt)?;
    let (lt, rt) = (left.trace.snapshot(), right.trace.snapshot());
    let divergence = structural_diff(&lt, &rt).map(|d| format!("{d:?}"));
    let mut secrets = left.registry.secrets();
    secrets.extend(right.registry.secrets());
    let secret_hits = scan_for_secrets(&lt, &secrets).len() + scan_for_secrets(&rt, &secrets).len();
    Ok(PairedVerdict { replaced_event: event, pass: divergence.is_none() && secret_hits == 0, divergence, secret_hits })
}

/// A schedule index whose complaint nobody else reports against, if any.
pub fn unmatched_submission(cfg: &ScenarioConfig) -> Option<usize> {
    use super::oracle::normalize;
    let mut reporters: BTreeMap<String, std::collections::BTreeSet<String>> = BTreeMap::new();
    for e in &cfg.schedule {
        if let Action::Submit { perp, user, .. } = &e.action {
            reporters.entry(normalize(perp)).or_default().insert(normalize(user));
        }
    }
    cfg.schedule
        .iter()
        .position(|e| matches!(&e.action, Action::Submit { perp, .. } if reporters[&normalize(perp)].len() == 1))
}

/// A small scenario with one matched pair and one lone complaint at a random position.
pub fn paired_base(seed: u64) -> ScenarioConfig {
    let mut rng = derive_rng(seed, "paired-base");
    let mut cfg = ScenarioConfig::baseline(4, 3, 2, seed);
    cfg.name = format!("paired-{seed}");
    cfg.tick_seconds = 0;
    cfg.scan_period_seconds = 0;
    cfg.lease_ttl_seconds = 30 * 86_400;
    let submit = |at: u64, perp: &str, user: &str, rng: &mut crate::crypto::SimRng| {
        let len = rng.gen_range(12..48);
        super::scenario::Event {
            at,
            action: Action::Submit { perp: perp.into(), user: user.into(), body: random_text(rng, len), agent: None },
        }
    };
    let lone = rng.gen_range(0..3u64);
    cfg.schedule = vec![
        submit(100 + 100 * ((lone + 1) % 3), "perp-a", "user-1", &mut rng),
        submit(100 + 100 * ((lone + 2) % 3), "perp-a", "user-2", &mut rng),
        submit(100 + 100 * lone, "perp-lone", "user-3", &mut rng),
    ];
    cfg.schedule.sort_by_key(|e| e.at);
    cfg.schedule.push(super::scenario::Event { at: 1000, action: Action::Scan { agent: None } });
    cfg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lone_complaint_is_found() {
        for seed in 0..6 {
            let cfg = paired_base(seed);
            let i = unmatched_submission(&cfg).unwrap();
            assert!(matches!(&cfg.schedule[i].action, Action::Submit { perp, .. } if perp == "perp-lone"));
        }
    }

    #[test]
    fn random_body_keeps_length_only() {
        let cfg = paired_base(2);
        let i = unmatched_submission(&cfg).unwrap();
        let alt = with_random_body(&cfg, i, 9);
        let body = |c: &ScenarioConfig| match &c.schedule[i].action {
            Action::Submit { body, .. } => body.clone(),
            _ => unreachable!(),
        };
        assert_eq!(body(&cfg).len(), body(&alt).len());
        assert_ne!(body(&cfg), body(&alt));
        assert_eq!(cfg.schedule.len(), alt.schedule.len());
    }
}
