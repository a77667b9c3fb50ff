//! Repository bootstrapping: turn a checkout into a verified, replayable
//! `.bootstrap` contract.
//!
//! The pipeline scans the repository for evidence, asks a backend for a
//! phased plan, renders it into shell scripts, runs them in a sandboxed
//! session and repairs the plan from execution traces until a clean replay
//! passes.

pub mod backends;
pub mod contract;
pub mod evidence;
pub mod json;
pub mod orchestrator;
pub mod plan;
pub mod repair;
pub mod reuse;
pub mod shell;
pub mod verifier;
