//! Deterministic Prover/Verifier simulator for verifying how large-scale AI
//! compute is used.
//!
//! The Prover side runs fixed-point neural workloads on a simulated cluster
//! and emits evidence: training checkpoints, chip-signed workload
//! certificates, network-tap samples and power traces. The Verifier side
//! checks that evidence and reports a verdict per verification subgoal.

pub mod accounting;
pub mod attest;
pub mod datacheck;
pub mod detnet;
pub mod error;
pub mod model;
pub mod nettap;
pub mod oracle;
pub mod reexec;
pub mod scenarios;
pub mod svg;

pub use error::{Error, Result};
