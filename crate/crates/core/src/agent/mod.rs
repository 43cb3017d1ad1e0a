//! Agent enclave logic and its untrusted host.

pub mod complaint;
pub mod config;
pub mod host;
pub mod log;
pub mod program;
pub mod scanner;

pub use config::AgentConfig;
pub use host::{transfer_key, AgentHost, HostError};
pub use program::{AgentError, AgentProgram, NotLeasedReason, Reply, Request};
