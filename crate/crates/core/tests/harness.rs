use std::time::Instant;

use confid::harness::attacks::{rollback_attack, shadow_agent_attack, starve_attack};
use confid::harness::audit::{paired_base, paired_secrecy, unmatched_submission};
use confid::harness::generate::{random_scenario, GenParams};
use confid::harness::{run_scenario, Action, Event, ScenarioConfig};

fn submit(at: u64, perp: &str, user: &str, body: &str) -> Event {
    Event { at, action: Action::Submit { perp: perp.into(), user: user.into(), body: body.into(), agent: None } }
}

#[test]
fn baseline_pair_is_reported_and_lone_complaint_is_not() {
    let mut cfg = ScenarioConfig::baseline(4, 3, 2, 1);
    cfg.schedule = vec![
        submit(100, "Mallory", "alice", "first complaint body"),
        submit(200, "bob-the-lone", "carol", "lonely complaint body"),
        submit(300, " MALLORY ", "dave", "second complaint body"),
        Event { at: 400, action: Action::Scan { agent: None } },
    ];
    cfg.duration_seconds = Some(2 * 86_400);
    let t = Instant::now();
    let r = run_scenario(&cfg).unwrap();
    eprintln!("baseline: {:?} {:?}", t.elapsed(), r.properties);
    assert!(r.all_pass(), "{}", r.to_json());
    assert_eq!(r.acked, 3);
    assert_eq!(r.authority.first().map(|a| a.matches.len()), Some(1));
    assert_eq!(r.authority[0].matches[0].1, 2);
}

#[test]
fn random_scenario_passes_all_properties() {
    let p = GenParams { max_complaints: 40, ..GenParams::default() };
    for seed in 0..3 {
        let cfg = random_scenario(seed, &p);
        let t = Instant::now();
        let r = run_scenario(&cfg).unwrap();
        eprintln!("random {seed}: {} complaints {:?}", r.submitted, t.elapsed());
        assert!(r.all_pass(), "{:?} {:?}", r.properties, r.match_discrepancies);
    }
}

#[test]
fn paired_runs_are_indistinguishable() {
    let cfg = paired_base(3);
    let ev = unmatched_submission(&cfg).unwrap();
    let v = paired_secrecy(&cfg, ev, 3).unwrap();
    assert!(v.pass, "{v:?}");
}

#[test]
fn shadow_agent_locks_out_without_k_colluders() {
    let t = Instant::now();
    let honest = shadow_agent_attack(1, 4, 3, 0).unwrap();
    eprintln!("shadow: {:?} {honest:?}", t.elapsed());
    assert!(honest.within_ttl, "{honest:?}");
    let colluding = shadow_agent_attack(1, 4, 3, 3).unwrap();
    assert_eq!(colluding.locked_out_at, None, "{colluding:?}");
}

#[test]
fn starvation_threshold() {
    assert_eq!(starve_attack(1, 4, 3, 1).unwrap().locked_out_at, None);
    let v = starve_attack(1, 4, 3, 2).unwrap();
    assert!(v.locked_out_at.is_some_and(|t| t <= v.ttl + 300), "{v:?}");
}

#[test]
fn rollback_is_rejected_below_read_quorum() {
    for c in 0..=2 {
        let v = rollback_attack(7, 4, 3, 3, c).unwrap();
        assert!(v.pass(), "{v:?}");
        assert_eq!(v.replays_accepted, 0);
    }
    let v = rollback_attack(7, 4, 3, 3, 3).unwrap();
    eprintln!("at threshold: {v:?}");
}

#[test]
fn same_seed_gives_identical_results() {
    let p = GenParams { max_complaints: 20, max_scans: 2, ..GenParams::default() };
    let cfg = random_scenario(11, &p);
    let a = run_scenario(&cfg).unwrap().to_json();
    let b = run_scenario(&cfg).unwrap().to_json();
    assert_eq!(a, b);
    let other = run_scenario(&random_scenario(12, &p)).unwrap().to_json();
    assert_ne!(a, other);
}
