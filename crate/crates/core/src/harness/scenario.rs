//! Declarative scenario files (TOML).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::admin::{QuorumPolicy, Role};
use crate::agent::scanner::{DEFAULT_REPORT_SIZE, REPORT_OVERHEAD};
use crate::ledger::{HubStrategy, PeerBehavior};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentPlan {
    pub machine: u32,
    /// `"leader+writer+scanner"`, `"writer"`, `"backup"`, ...
    pub roles: String,
}

impl AgentPlan {
    pub fn new(machine: u32, roles: &str) -> Self {
        AgentPlan { machine, roles: roles.into() }
    }

    pub fn role(&self) -> Role {
        Role::parse(&self.roles).unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corruption {
    pub org: u32,
    #[serde(flatten)]
    pub behavior: PeerBehavior,
}

/// One scheduled event. Agents are referenced by machine id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "kebab-case")]
pub enum Action {
    Submit {
        perp: String,
        user: String,
        body: String,
        #[serde(default)]
        agent: Option<u32>,
    },
    Scan {
        #[serde(default)]
        agent: Option<u32>,
    },
    /// Cuts the agent off from every honest administrator and the ledger.
    Isolate { agent: u32 },
    Heal { agent: u32 },
    /// Power loss: the enclave restarts with a new trusted-time epoch.
    Reboot { agent: u32 },
    /// Restores sealed state after a reboot and reloads leases from disk.
    Recover { agent: u32 },
    /// Honest administrators issue leases bound to freshly retrieved trusted time.
    Revive {
        agent: u32,
        #[serde(default)]
        role: Option<String>,
    },
    /// Permanently removes the agent: its machine is wiped.
    Kill { agent: u32 },
    Corrupt {
        org: u32,
        #[serde(flatten)]
        behavior: PeerBehavior,
    },
    Hub { strategy: HubStrategy },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    /// Seconds after cluster inception.
    pub at: u64,
    #[serde(flatten)]
    pub action: Action,
}

fn default_ttl() -> u64 {
    86_400
}

fn default_scan_period() -> u64 {
    86_400
}

fn default_report_size() -> u32 {
    DEFAULT_REPORT_SIZE
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    pub n: u32,
    pub k: u32,
    /// Defaults to `n - k + 1`.
    #[serde(default)]
    pub read_quorum: Option<u32>,
    /// Defaults to `n`.
    #[serde(default)]
    pub upgrade_threshold: Option<u32>,
    pub agents: Vec<AgentPlan>,
    #[serde(default = "default_ttl")]
    pub lease_ttl_seconds: u64,
    /// `0` disables automatic scans.
    #[serde(default = "default_scan_period")]
    pub scan_period_seconds: u64,
    #[serde(default = "default_report_size")]
    pub report_size: u32,
    #[serde(default)]
    pub corruption: Vec<Corruption>,
    /// Administrators colluding with an attacker: isolation never cuts them off from an agent.
    #[serde(default)]
    pub corrupt_admins: Vec<u32>,
    /// Administrators that refuse every renewal and revival.
    #[serde(default)]
    pub refusing_admins: Vec<u32>,
    #[serde(default)]
    pub hub: HubStrategy,
    #[serde(default)]
    pub schedule: Vec<Event>,
    /// Run length; defaults to one scan period past the last event.
    #[serde(default)]
    pub duration_seconds: Option<u64>,
    /// `0` disables automatic PERIODIC ticks and renewals.
    #[serde(default = "default_tick")]
    pub tick_seconds: u64,
    #[serde(default)]
    pub debug_leak: bool,
    pub seed: u64,
}

fn default_tick() -> u64 {
    1800
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("scenario parse error: {0}")]
    Parse(String),
}

impl ScenarioConfig {
    /// One leader+writer+scanner and `n_agents - 1` writer+scanner agents.
    pub fn baseline(n: u32, k: u32, n_agents: u32, seed: u64) -> Self {
        let agents = (1..=n_agents)
            .map(|m| AgentPlan::new(m, if m == 1 { "leader+writer+scanner" } else { "writer+scanner" }))
            .collect();
        ScenarioConfig {
            name: "baseline".into(),
            n,
            k,
            read_quorum: None,
            upgrade_threshold: None,
            agents,
            lease_ttl_seconds: default_ttl(),
            scan_period_seconds: default_scan_period(),
            report_size: DEFAULT_REPORT_SIZE,
            corruption: Vec::new(),
            corrupt_admins: Vec::new(),
            refusing_admins: Vec::new(),
            hub: HubStrategy::Honest,
            schedule: Vec::new(),
            duration_seconds: None,
            tick_seconds: default_tick(),
            debug_leak: false,
            seed,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn policy(&self) -> Result<QuorumPolicy, ConfigError> {
        let bad = |e: crate::admin::PolicyError| ConfigError::Invalid(e.to_string());
        let mut p = QuorumPolicy::new(self.n, self.k).map_err(bad)?;
        if let Some(rq) = self.read_quorum {
            p = p.with_read_quorum(rq).map_err(bad)?;
        }
        if let Some(t) = self.upgrade_threshold {
            p = p.with_upgrade_threshold(t).map_err(bad)?;
        }
        Ok(p)
    }

    pub fn duration(&self) -> u64 {
        self.duration_seconds
            .unwrap_or_else(|| self.schedule.iter().map(|e| e.at).max().unwrap_or(0) + self.scan_period_seconds.max(1))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        self.policy()?;
        if self.agents.is_empty() {
            return bad("no agents".into());
        }
        let mut machines: Vec<u32> = self.agents.iter().map(|a| a.machine).collect();
        machines.sort_unstable();
        machines.dedup();
        if machines.len() != self.agents.len() {
            return bad("duplicate machine ids".into());
        }
        if let Some(a) = self.agents.iter().find(|a| Role::parse(&a.roles).is_none()) {
            return bad(format!("unknown role in {:?}", a.roles));
        }
        if (self.report_size as usize) < REPORT_OVERHEAD + 4 {
            return bad(format!("report_size below {}", REPORT_OVERHEAD + 4));
        }
        if self.lease_ttl_seconds == 0 {
            return bad("lease_ttl_seconds must be positive".into());
        }
        for c in &self.corruption {
            if c.org == 0 || c.org > self.n {
                return bad(format!("corruption names org {} outside 1..={}", c.org, self.n));
            }
        }
        for a in self.corrupt_admins.iter().chain(&self.refusing_admins) {
            if *a == 0 || *a > self.n {
                return bad(format!("admin {a} outside 1..={}", self.n));
            }
        }
        for e in &self.schedule {
            let agent = match &e.action {
                Action::Submit { agent, .. } | Action::Scan { agent } => *agent,
                Action::Isolate { agent }
                | Action::Heal { agent }
                | Action::Reboot { agent }
                | Action::Recover { agent }
                | Action::Revive { agent, .. }
                | Action::Kill { agent } => Some(*agent),
                Action::Corrupt { org, .. } => {
                    if *org == 0 || *org > self.n {
                        return bad(format!("event corrupts org {org} outside 1..={}", self.n));
                    }
                    None
                }
                Action::Hub { .. } => None,
            };
            if let Some(m) = agent {
                if !machines.contains(&m) {
                    return bad(format!("event at {} names unknown agent {m}", e.at));
                }
            }
        }
        Ok(())
    }

    /// Organizations running non-honest peers.
    pub fn corrupt_orgs(&self) -> usize {
        let mut orgs: Vec<u32> = self.corruption.iter().filter(|c| !c.behavior.is_honest()).map(|c| c.org).collect();
        orgs.sort_unstable();
        orgs.dedup();
        orgs.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
name = "sample"
n = 4
k = 3
seed = 9
agents = [{ machine = 1, roles = "leader+writer+scanner" }, { machine = 2, roles = "backup" }]

[[corruption]]
org = 2
behavior = "rollback"
truncate_to = 1

[[schedule]]
at = 60
action = "submit"
perp = "P"
user = "U"
body = "b"

[[schedule]]
at = 120
action = "scan"
"#;

    #[test]
    fn parses_and_defaults() {
        let c = ScenarioConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(c.policy().unwrap().read_quorum, 2);
        assert_eq!(c.corruption[0].behavior, PeerBehavior::Rollback { truncate_to: 1 });
        assert_eq!(c.schedule[1].action, Action::Scan { agent: None });
        assert_eq!(c.duration(), 120 + 86_400);
        assert!(c.agents[1].role().is_empty());
        assert_eq!(ScenarioConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn rejects_inconsistent_configs() {
        let mut c = ScenarioConfig::baseline(4, 3, 2, 0);
        c.k = 5;
        assert!(c.validate().is_err());
        let mut c = ScenarioConfig::baseline(4, 3, 2, 0);
        c.schedule.push(Event { at: 1, action: Action::Kill { agent: 9 } });
        assert!(c.validate().is_err());
        let mut c = ScenarioConfig::baseline(4, 3, 2, 0);
        c.agents[0].roles = "king".into();
        assert!(c.validate().is_err());
    }
}
