//! Trace-driven repair: diagnosis, structured deltas over the plan, and the
//! sanity check that keeps repairs from weakening verification.

mod apply;
mod diagnose;
mod sanity;

use thiserror::Error;

pub use apply::{apply_delta, apply_edits, ApplyError, Edit, Field, RepairDelta};
pub use diagnose::{
    diagnose_stage, diagnose_trace, repair_target, DiagnoseError, FailureCategory, FailureSignature, TOOLCHAIN_PROGRAMS,
};
pub use sanity::{sanity_check, sanity_check_contract, SanityVerdict, SanityViolation, ViolationKind};

use crate::backends::{
    build_repair_request, request_structured, strip_fence, Backend, BackendError, BackendResponse, TokenLedger,
    REJECTION_LABEL,
};
use crate::contract::BootstrapContract;
use crate::plan::BootstrapPlan;
use crate::verifier::ExecutionTrace;

/// Parses a delta document and checks it against `plan`: every index must
/// be in bounds when the edits are applied in order.
pub fn parse_delta(text: &str, plan: &BootstrapPlan) -> Result<RepairDelta, String> {
    let delta: RepairDelta = serde_json::from_str(strip_fence(text)).map_err(|e| format!("delta schema: {e}"))?;
    apply_edits(plan, &delta).map_err(|e| e.to_string())?;
    Ok(delta)
}

#[derive(Debug, Clone)]
pub struct Proposal {
    pub delta: RepairDelta,
    pub signature: FailureSignature,
    pub attempts: usize,
    pub responses: Vec<BackendResponse>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RepairError {
    #[error("nothing to repair: every stage passed")]
    NoFailure,
    #[error("repairer produced no valid delta after {attempts} attempts: {last_error}")]
    StructuredOutputExhausted { attempts: usize, last_error: String },
    #[error("repair backend unavailable: {0}")]
    BackendUnavailable(String),
}

/// Asks the repair backend for a delta against `plan`, targeting the first
/// gated failure or else a failing strongest stage. Invalid documents and
/// out-of-bounds indices consume attempts from `retry_budget`. `feedback`
/// explains why the previous proposal of this round was refused.
pub fn propose_repair(
    plan: &BootstrapPlan,
    contract: &BootstrapContract,
    trace: &ExecutionTrace,
    backend: &dyn Backend,
    retry_budget: usize,
    ledger: &TokenLedger,
    feedback: Option<&str>,
) -> Result<Proposal, RepairError> {
    let signature = repair_target(trace).ok_or(RepairError::NoFailure)?;
    let mut request = build_repair_request(plan, trace).with_playbook(&contract.failure_playbook);
    if let Some(f) = feedback {
        request = request.with_document(REJECTION_LABEL, serde_json::to_string(f).expect("string serializes"));
    }
    match request_structured(backend, &request, retry_budget, ledger, |text| parse_delta(text, plan)) {
        Ok(s) => Ok(Proposal { delta: s.value, signature, attempts: s.attempts, responses: s.responses }),
        Err(BackendError::StructuredOutputExhausted { attempts, last_error }) => {
            Err(RepairError::StructuredOutputExhausted { attempts, last_error })
        }
        Err(BackendError::TransportError(e)) => Err(RepairError::BackendUnavailable(e)),
    }
}
