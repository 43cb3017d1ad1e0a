//! Scenario runner: cluster construction, scheduling, adversaries, audits and results.

pub mod attacks;
pub mod audit;
pub mod cluster;
pub mod generate;
pub mod oracle;
pub mod run;
pub mod scenario;

pub use cluster::Cluster;
pub use run::{execute, run_scenario, RunResult};
pub use scenario::{Action, AgentPlan, ConfigError, Event, ScenarioConfig};
