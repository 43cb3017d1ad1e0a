//! Brute-force reference for what each authority report must contain.
//!
//! Identifiers here are normalized by ASCII trim+lowercase; generated
//! scenarios use ASCII identifiers, for which this agrees with full case folding.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::agent::scanner::MatchRecord;
use crate::crypto::{hash, HashDigest};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HistoryItem {
    Acked { perp: String, user: String, body: String },
    /// A report the authority accepted.
    Report(Vec<MatchRecord>),
}

pub fn normalize(id: &str) -> String {
    id.trim().to_lowercase()
}

/// A match as the authority sees it: perpetrator digest and the (reporter digest, body) set.
pub type MatchView = (HashDigest, BTreeSet<(HashDigest, Vec<u8>)>);

pub fn view_of(m: &MatchRecord) -> MatchView {
    (m.perpetrator_id, m.complaints.iter().map(|c| (c.user_id, c.body.clone())).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Discrepancy {
    pub report: usize,
    pub missing: usize,
    pub unexpected: usize,
}

/// Expected match set for every report in `history`, in order.
pub fn expected_reports(history: &[HistoryItem]) -> Vec<BTreeSet<MatchView>> {
    let mut first: BTreeMap<String, Vec<(String, String)>> = BTreeMap::new();
    let mut reported_users: BTreeMap<String, usize> = BTreeMap::new();
    let mut out = Vec::new();
    for item in history {
        match item {
            HistoryItem::Acked { perp, user, body } => {
                let users = first.entry(normalize(perp)).or_default();
                let u = normalize(user);
                if !users.iter().any(|(x, _)| *x == u) {
                    users.push((u, body.clone()));
                }
            }
            HistoryItem::Report(_) => {
                let mut due = BTreeSet::new();
                for (p, users) in &first {
                    let before = reported_users.get(p).copied().unwrap_or(0);
                    if users.len() >= 2 && users.len() > before {
                        let set = users.iter().map(|(u, b)| (hash(u.as_bytes()), b.as_bytes().to_vec())).collect();
                        due.insert((hash(p.as_bytes()), set));
                    }
                }
                for (p, users) in &first {
                    reported_users.insert(p.clone(), users.len());
                }
                out.push(due);
            }
        }
    }
    out
}

/// Per-report differences between delivered and expected match sets.
pub fn compare(history: &[HistoryItem]) -> Vec<Discrepancy> {
    let expected = expected_reports(history);
    let delivered = history.iter().filter_map(|h| match h {
        HistoryItem::Report(m) => Some(m.iter().map(view_of).collect::<BTreeSet<_>>()),
        _ => None,
    });
    expected
        .iter()
        .zip(delivered)
        .enumerate()
        .filter_map(|(i, (exp, got))| {
            let missing = exp.difference(&got).count();
            let unexpected = got.difference(exp).count();
            (missing + unexpected > 0).then_some(Discrepancy { report: i, missing, unexpected })
        })
        .collect()
}

/// Bodies of acked complaints that were never part of a match at the end of `history`.
pub fn unmatched_bodies(history: &[HistoryItem]) -> Vec<String> {
    let mut users: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for h in history {
        if let HistoryItem::Acked { perp, user, .. } = h {
            users.entry(normalize(perp)).or_default().insert(normalize(user));
        }
    }
    history
        .iter()
        .filter_map(|h| match h {
            HistoryItem::Acked { perp, body, .. } if users[&normalize(perp)].len() < 2 => Some(body.clone()),
            _ => None,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn acked(p: &str, u: &str, b: &str) -> HistoryItem {
        HistoryItem::Acked { perp: p.into(), user: u.into(), body: b.into() }
    }

    #[test]
    fn expected_sets_follow_new_reporters_only() {
        let h = vec![
            acked("P", "a", "1"),
            HistoryItem::Report(vec![]),
            acked(" p ", "B", "2"),
            acked("p", "b", "dup"),
            HistoryItem::Report(vec![]),
            HistoryItem::Report(vec![]),
            acked("P", "c", "3"),
            HistoryItem::Report(vec![]),
        ];
        let e = expected_reports(&h);
        assert_eq!(e.iter().map(BTreeSet::len).collect::<Vec<_>>(), vec![0, 1, 0, 1]);
        let (_, set) = e[3].iter().next().unwrap();
        assert_eq!(set.len(), 3);
        assert!(unmatched_bodies(&h).is_empty());
        assert_eq!(unmatched_bodies(&[acked("q", "a", "lonely")]), vec!["lonely".to_string()]);
    }
}
