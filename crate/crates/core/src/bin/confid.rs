use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use confid::admin::{Lease, Role};
use confid::crypto::HashDigest;
use confid::enclave::Measurement;
use confid::harness::attacks::{rollback_attack, shadow_agent_attack, starve_attack};
use confid::harness::audit::secrecy_audit;
use confid::harness::{execute, run_scenario, Action, Cluster, Event, RunResult, ScenarioConfig};
use confid::ledger::{PeerBehavior, Query, StateView};

const RESULTS_ENV: &str = "CONFID_RESULTS_DIR";
const CLUSTER_FILE: &str = "cluster.toml";

#[derive(Parser)]
#[command(name = "confid", version, about = "Simulated enclave cluster: scenarios, attacks, audits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and write its result to the results directory.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write a baseline cluster scenario and check that inception succeeds.
    InitCluster {
        #[arg(short)]
        n: u32,
        #[arg(short)]
        k: u32,
        #[arg(long, default_value_t = 2)]
        agents: u32,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Run one adversary driver; exits 0 iff the attack is defeated.
    Attack {
        kind: AttackKind,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(short, default_value_t = 4)]
        n: u32,
        #[arg(short, default_value_t = 3)]
        k: u32,
        /// Colluding, corrupt or refusing administrators, depending on the attack.
        #[arg(long, default_value_t = 1)]
        adversaries: u32,
        #[arg(long)]
        read_quorum: Option<u32>,
    },
    /// Secrecy audit of a stored result.
    Audit { result: PathBuf },
    Client {
        #[command(subcommand)]
        command: ClientCommand,
    },
    Authority {
        #[command(subcommand)]
        command: AuthorityCommand,
    },
    /// Administrator lease operations on the initialized cluster; leases are written in wire form.
    Admin {
        #[command(subcommand)]
        command: AdminCommand,
    },
    Ledger {
        #[command(subcommand)]
        command: LedgerCommand,
    },
}

#[derive(Subcommand)]
enum AdminCommand {
    IssueLease {
        #[arg(long)]
        admin: u32,
        /// Machine id of the agent.
        #[arg(long)]
        agent: u32,
        /// Roles joined by '+'; defaults to the agent's planned roles.
        #[arg(long)]
        role: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Audit the agent's log and renew against its last trusted time.
    Renew {
        #[arg(long)]
        admin: u32,
        #[arg(long)]
        agent: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Lease bound to trusted time freshly retrieved from an agent with stale leases.
    Revive {
        #[arg(long)]
        admin: u32,
        #[arg(long)]
        agent: u32,
        #[arg(long)]
        role: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Special lease sanctioning the agent's build as `measurement` (hex).
    IssueUpgrade {
        #[arg(long)]
        admin: u32,
        #[arg(long)]
        agent: u32,
        #[arg(long)]
        measurement: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode a lease file and check its signature against the cluster's administrator keys.
    ShowLease { lease: PathBuf },
}

#[derive(Subcommand)]
enum LedgerCommand {
    /// Per-peer state and the entries of a verified GET.
    Inspect,
    /// Make one organization's peer serve a truncated ledger from now on.
    Tamper {
        #[arg(long)]
        org: u32,
        #[arg(long)]
        truncate_to: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum AttackKind {
    Shadow,
    Rollback,
    Starve,
}

#[derive(Subcommand)]
enum ClientCommand {
    /// Submit one complaint to the initialized cluster.
    Submit {
        /// Machine id of the writer agent.
        #[arg(long)]
        agent: u32,
        #[arg(long)]
        perp: String,
        #[arg(long)]
        user: String,
        #[arg(long)]
        body: PathBuf,
    },
}

#[derive(Subcommand)]
enum AuthorityCommand {
    /// Trigger a scan and show what the authority received.
    Inbox {
        #[arg(long)]
        decrypt: bool,
    },
}

fn results_dir() -> PathBuf {
    std::env::var_os(RESULTS_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("confid-results"))
}

fn write_result(name: &str, body: &str) -> Result<PathBuf, String> {
    let dir = results_dir();
    std::fs::create_dir_all(&dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let path = dir.join(name);
    std::fs::write(&path, body).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(path)
}

fn read(path: &Path) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn print_properties(r: &RunResult) {
    for (name, pass) in &r.properties {
        println!("{} {name}", verdict(*pass));
    }
}

fn load_cluster() -> Result<(PathBuf, ScenarioConfig), String> {
    let path = results_dir().join(CLUSTER_FILE);
    let cfg = ScenarioConfig::from_toml(&read(&path)?).map_err(|e| e.to_string())?;
    Ok((path, cfg))
}

fn next_time(cfg: &ScenarioConfig) -> u64 {
    cfg.schedule.last().map_or(60, |e| e.at + 60)
}

fn report<T: Serialize>(name: &str, v: &T, pass: bool) -> Result<bool, String> {
    let json = serde_json::to_string_pretty(v).expect("verdict serializes");
    println!("{json}");
    let path = write_result(name, &json)?;
    println!("{} {name} -> {}", verdict(pass), path.display());
    Ok(pass)
}

fn parse_role(s: &str) -> Result<Role, String> {
    Role::parse(s).ok_or_else(|| format!("unknown role in {s:?}"))
}

fn cluster_host(cluster: &Cluster, machine: u32) -> Result<usize, String> {
    cluster.index_of(machine).ok_or_else(|| format!("no agent on machine {machine}"))
}

fn admin_index(cluster: &Cluster, admin: u32) -> Result<usize, String> {
    cluster.admins.iter().position(|a| a.id() == admin).ok_or_else(|| format!("no administrator {admin}"))
}

fn write_lease(out: &Path, lease: &Lease) -> Result<bool, String> {
    std::fs::write(out, lease.to_wire()).map_err(|e| format!("{}: {e}", out.display()))?;
    println!("lease admin-{} agent {} role {} expires {} -> {}", lease.admin_id, lease.agent_id.to_hex(), lease.role.name(), lease.expiration, out.display());
    Ok(true)
}

fn admin_command(command: AdminCommand) -> Result<bool, String> {
    let (_, cfg) = load_cluster()?;
    let mut cluster = execute(&cfg).map_err(|e| e.to_string())?;
    let ttl = cfg.lease_ttl_seconds;
    match command {
        AdminCommand::IssueLease { admin, agent, role, out } => {
            let (a, i) = (admin_index(&cluster, admin)?, cluster_host(&cluster, agent)?);
            let role = role.as_deref().map(parse_role).transpose()?.unwrap_or(cluster.roles[i]);
            let p = cluster.hosts[i].publication_ref().cloned().ok_or("agent not attested")?;
            let lease = cluster.admins[a].issue_lease(&p, role, ttl).map_err(|e| e.to_string())?;
            write_lease(&out, &lease)
        }
        AdminCommand::Renew { admin, agent, out } => {
            let (a, i) = (admin_index(&cluster, admin)?, cluster_host(&cluster, agent)?);
            match cluster.renew_by(a, i) {
                Some(Ok(lease)) => write_lease(&out, &lease),
                Some(Err(refusal)) => {
                    println!("refused: {refusal}");
                    Ok(false)
                }
                None => Err(format!("administrator {admin} cannot reach agent {agent}")),
            }
        }
        AdminCommand::Revive { admin, agent, role, out } => {
            let (a, i) = (admin_index(&cluster, admin)?, cluster_host(&cluster, agent)?);
            let role = role.as_deref().map(parse_role).transpose()?;
            let lease = cluster.revive_by(a, i, role).map_err(|e| e.to_string())?;
            write_lease(&out, &lease)
        }
        AdminCommand::IssueUpgrade { admin, agent, measurement, out } => {
            let (a, i) = (admin_index(&cluster, admin)?, cluster_host(&cluster, agent)?);
            let m = Measurement(HashDigest::from_hex(&measurement).ok_or("measurement must be 64 hex digits")?);
            let p = cluster.hosts[i].publication_ref().cloned().ok_or("agent not attested")?;
            let lease = cluster.admins[a].issue_upgrade_lease(&p, m, ttl).map_err(|e| e.to_string())?;
            write_lease(&out, &lease)
        }
        AdminCommand::ShowLease { lease } => {
            let bytes = std::fs::read(&lease).map_err(|e| format!("{}: {e}", lease.display()))?;
            let l = Lease::from_wire(&bytes).map_err(|e| e.to_string())?;
            let valid = cluster.admins.iter().any(|a| a.id() == l.admin_id && l.verify_signature(a.public_key()));
            println!("agent_id {}", l.agent_id.to_hex());
            println!("admin_id {}", l.admin_id);
            println!("role {}", l.role.name());
            if let Some(m) = l.upgrade_measurement {
                println!("upgrade_measurement {}", m.0.to_hex());
            }
            println!("creation_time {}", l.creation_time);
            println!("base_trusted_time {}", l.base_trusted_time.time);
            println!("expiration {}", l.expiration);
            println!("{} signature", verdict(valid));
            Ok(valid)
        }
    }
}

fn inspect(cluster: &mut Cluster) -> Result<bool, String> {
    println!("committed {}", cluster.ledger.committed_len());
    for (org, count, root) in cluster.ledger.digests() {
        let behavior = cluster.ledger.peers().iter().find(|p| p.org_id() == org).map(|p| p.behavior());
        println!("peer org-{org} {behavior:?} entries {count} root {}", root.to_hex());
    }
    let nonce = [0x5A; 32];
    let response = cluster.ledger.get("observer", nonce, Query::All).map_err(|e| e.to_string())?;
    match cluster.verify_response(&response, &nonce) {
        Ok(state) => {
            println!("verified GET: {} entries, root {}", state.count, state.root.to_hex());
            if let StateView::Full(entries) = &response.view {
                for e in entries {
                    println!("  {} {} {}", e.seq, e.kind.name(), e.payload_hash.to_hex());
                }
            }
            Ok(true)
        }
        Err(e) => {
            println!("GET rejected: {e}");
            Ok(false)
        }
    }
}

fn ledger_command(command: LedgerCommand) -> Result<bool, String> {
    let (path, mut cfg) = load_cluster()?;
    if let LedgerCommand::Tamper { org, truncate_to } = command {
        let at = next_time(&cfg);
        cfg.schedule.push(Event { at, action: Action::Corrupt { org, behavior: PeerBehavior::Rollback { truncate_to } } });
        cfg.validate().map_err(|e| e.to_string())?;
        std::fs::write(&path, cfg.to_toml()).map_err(|e| format!("{}: {e}", path.display()))?;
        println!("org-{org} rolls back to {truncate_to} entries from t={at}");
    }
    let mut cluster = execute(&cfg).map_err(|e| e.to_string())?;
    inspect(&mut cluster)
}

fn run(cli: Cli) -> Result<bool, String> {
    match cli.command {
        Command::Run { scenario, seed } => {
            let mut cfg = ScenarioConfig::from_toml(&read(&scenario)?).map_err(|e| e.to_string())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let result = run_scenario(&cfg).map_err(|e| e.to_string())?;
            let path = write_result(&format!("{}-{}.json", cfg.name, cfg.seed), &result.to_json())?;
            print_properties(&result);
            println!("result -> {}", path.display());
            Ok(result.all_pass())
        }
        Command::InitCluster { n, k, agents, seed } => {
            let mut cfg = ScenarioConfig::baseline(n, k, agents, seed);
            cfg.name = "cluster".into();
            cfg.tick_seconds = 0;
            cfg.scan_period_seconds = 0;
            cfg.validate().map_err(|e| e.to_string())?;
            let cluster = execute(&cfg).map_err(|e| e.to_string())?;
            let ok = cluster.events.iter().any(|e| e.event == "inception" && e.outcome == "ok");
            for e in &cluster.events {
                println!("{} {} {}", e.at, e.event, e.outcome);
            }
            for (holder, digest) in cluster.key_digests() {
                println!("key-digest {holder} {}", digest.to_hex());
            }
            let path = write_result(CLUSTER_FILE, &cfg.to_toml())?;
            println!("{} inception -> {}", verdict(ok), path.display());
            Ok(ok)
        }
        Command::Attack { kind, seed, n, k, adversaries, read_quorum } => match kind {
            AttackKind::Shadow => {
                let v = shadow_agent_attack(seed, n, k, adversaries).map_err(|e| e.to_string())?;
                report(&format!("attack-shadow-{seed}.json"), &v, v.within_ttl)
            }
            AttackKind::Rollback => {
                let rq = read_quorum.unwrap_or(n - k + 1);
                let v = rollback_attack(seed, n, k, rq, adversaries).map_err(|e| e.to_string())?;
                report(&format!("attack-rollback-{seed}.json"), &v, v.pass())
            }
            AttackKind::Starve => {
                let v = starve_attack(seed, n, k, adversaries).map_err(|e| e.to_string())?;
                let pass = v.locked_out_at.is_some() == (adversaries > n - k);
                report(&format!("attack-starve-{seed}.json"), &v, pass)
            }
        },
        Command::Audit { result } => {
            let r = RunResult::from_json(&read(&result)?).map_err(|e| e.to_string())?;
            let verdicts = secrecy_audit(&r);
            for v in &verdicts {
                println!("{} {} ({} hits)", verdict(v.pass), v.label, v.hits);
            }
            Ok(verdicts.iter().all(|v| v.pass))
        }
        Command::Client { command: ClientCommand::Submit { agent, perp, user, body } } => {
            let (path, mut cfg) = load_cluster()?;
            let text = String::from_utf8(std::fs::read(&body).map_err(|e| format!("{}: {e}", body.display()))?)
                .map_err(|_| "complaint body must be UTF-8".to_string())?;
            let at = next_time(&cfg);
            cfg.schedule.push(Event { at, action: Action::Submit { perp, user, body: text, agent: Some(agent) } });
            cfg.validate().map_err(|e| e.to_string())?;
            let cluster = execute(&cfg).map_err(|e| e.to_string())?;
            let acked = cluster.submissions.last().is_some_and(|s| s.acked);
            if acked {
                std::fs::write(&path, cfg.to_toml()).map_err(|e| format!("{}: {e}", path.display()))?;
            }
            println!("{}", if acked { "acked" } else { "failed" });
            Ok(acked)
        }
        Command::Authority { command: AuthorityCommand::Inbox { decrypt } } => {
            let (_, mut cfg) = load_cluster()?;
            let at = next_time(&cfg);
            cfg.schedule.push(Event { at, action: Action::Scan { agent: None } });
            let cluster = execute(&cfg).map_err(|e| e.to_string())?;
            let received = cluster.authority.received();
            println!("reports received: {}", received.len());
            if decrypt {
                for m in cluster.authority.matches() {
                    println!("match perpetrator {}", m.perpetrator_id.to_hex());
                    for c in &m.complaints {
                        println!("  reporter {} at {}: {}", c.user_id.to_hex(), c.submitted_at.time, String::from_utf8_lossy(&c.body).trim_end());
                    }
                }
            } else {
                println!("matches: {}", cluster.authority.matches().len());
            }
            Ok(!received.is_empty())
        }
        Command::Admin { command } => admin_command(command),
        Command::Ledger { command } => ledger_command(command),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
