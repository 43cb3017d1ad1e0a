pub mod admin;
pub mod agent;
pub mod attestation;
pub mod bus;
pub mod codec;
pub mod crypto;
pub mod enclave;
pub mod harness;
pub mod ledger;
pub mod participants;
pub mod trace;
