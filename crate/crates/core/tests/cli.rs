use std::path::Path;
use std::process::{Command, Output};

fn confid(results: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_confid"))
        .args(args)
        .env("CONFID_RESULTS_DIR", results)
        .current_dir(results)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn scenario(name: &str) -> String {
    format!("{}/scenarios/{name}.toml", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn shipped_scenarios_pass_and_audit_clean() {
    let dir = tempfile::tempdir().unwrap();
    for (name, seed) in [("baseline", 1), ("rollback", 2)] {
        let o = confid(dir.path(), &["run", &scenario(name)]);
        assert!(o.status.success(), "{}", stdout(&o));
        let result = dir.path().join(format!("{name}-{seed}.json"));
        let a = confid(dir.path(), &["audit", result.to_str().unwrap()]);
        assert!(a.status.success(), "{}", stdout(&a));
        assert!(!stdout(&a).contains("FAIL"));
    }
}

#[test]
fn leaky_build_fails_with_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(scenario("baseline")).unwrap().replace("seed = 1", "seed = 1\ndebug_leak = true");
    let path = dir.path().join("leaky.toml");
    std::fs::write(&path, text).unwrap();
    let o = confid(dir.path(), &["run", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
    assert!(stdout(&o).contains("FAIL secrecy"));
}

#[test]
fn cluster_session_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(confid(d, &["init-cluster", "-n", "4", "-k", "3"]).status.success());
    std::fs::write(d.join("body.txt"), "the same complaint text").unwrap();
    for (agent, perp, user) in [("1", "mallory", "alice"), ("2", "Mallory", "bob"), ("1", "oscar", "carol")] {
        let o = confid(d, &["client", "submit", "--agent", agent, "--perp", perp, "--user", user, "--body", "body.txt"]);
        assert_eq!(stdout(&o).trim(), "acked");
    }
    let inbox = confid(d, &["authority", "inbox", "--decrypt"]);
    let text = stdout(&inbox);
    assert!(inbox.status.success());
    assert_eq!(text.matches("reporter").count(), 2, "{text}");

    let issued = confid(d, &["admin", "issue-lease", "--admin", "2", "--agent", "2", "--out", "l.bin"]);
    assert!(issued.status.success(), "{}", stdout(&issued));
    let shown = confid(d, &["admin", "show-lease", "l.bin"]);
    assert!(shown.status.success());
    assert!(stdout(&shown).contains("PASS signature"));
    let mut bytes = std::fs::read(d.join("l.bin")).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    std::fs::write(d.join("bad.bin"), bytes).unwrap();
    assert_eq!(confid(d, &["admin", "show-lease", "bad.bin"]).status.code(), Some(1));

    assert!(confid(d, &["admin", "renew", "--admin", "1", "--agent", "1", "--out", "r.bin"]).status.success());
    assert!(confid(d, &["admin", "revive", "--admin", "3", "--agent", "2", "--out", "v.bin"]).status.success());
    let foreign = "ab".repeat(32);
    let up = confid(d, &["admin", "issue-upgrade", "--admin", "1", "--agent", "1", "--measurement", &foreign, "--out", "u.bin"]);
    assert_eq!(up.status.code(), Some(2));

    let inspect = confid(d, &["ledger", "inspect"]);
    assert!(stdout(&inspect).contains("verified GET: 3 entries"));
    for org in ["1", "2"] {
        let t = confid(d, &["ledger", "tamper", "--org", org, "--truncate-to", "1"]);
        assert!(stdout(&t).contains("verified GET: 3 entries"), "{}", stdout(&t));
    }
    let t = confid(d, &["ledger", "tamper", "--org", "3", "--truncate-to", "1"]);
    assert!(stdout(&t).contains("verified GET: 1 entries"), "{}", stdout(&t));
}

#[test]
fn attacks_report_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(confid(d, &["attack", "rollback", "--adversaries", "1", "--read-quorum", "3"]).status.success());
    assert_eq!(confid(d, &["attack", "rollback", "--adversaries", "3", "--read-quorum", "3"]).status.code(), Some(1));
    assert!(confid(d, &["attack", "shadow", "--adversaries", "1"]).status.success());
    assert!(confid(d, &["attack", "starve", "--adversaries", "2"]).status.success());
    assert!(d.join("attack-rollback-1.json").exists());
}
