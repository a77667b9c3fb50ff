use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::validate::{has_rejects, validate_plan, ConstraintViolation, PlanContext};
use super::{BootstrapPlan, CommandLocator, CommandSpec, Phase, Provenance, VerificationGoals};
use crate::backends::{
    build_plan_request, request_structured, strip_fence, Backend, BackendError, BackendResponse, TokenLedger,
};
use crate::evidence::{CiEvidenceReport, DiscoveryReport};

/// Wire form of a command: everything but `cmd` and `reason` may be omitted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandDoc {
    pub cmd: String,
    #[serde(default)]
    pub reason: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cwd: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_s: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl CommandDoc {
    pub fn into_spec(self, phase: Phase) -> CommandSpec {
        CommandSpec {
            cmd: self.cmd,
            cwd: self.cwd.filter(|c| !c.is_empty()).unwrap_or_else(|| ".".into()),
            timeout_s: self.timeout_s.unwrap_or_else(|| phase.default_timeout_s()),
            reason: self.reason,
            provenance: self.provenance.unwrap_or_default(),
        }
    }
}

impl From<&CommandSpec> for CommandDoc {
    fn from(c: &CommandSpec) -> Self {
        Self {
            cmd: c.cmd.clone(),
            reason: c.reason.clone(),
            cwd: Some(c.cwd.clone()),
            timeout_s: Some(c.timeout_s),
            provenance: Some(c.provenance.clone()),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanDocument {
    #[serde(default)]
    install_commands: Vec<CommandDoc>,
    #[serde(default)]
    doctor_commands: Vec<CommandDoc>,
    minimal_verify: CommandDoc,
    #[serde(default)]
    strongest_verify: Option<CommandDoc>,
    #[serde(default)]
    run_probes: Vec<CommandDoc>,
    #[serde(default)]
    constraints_notes: Vec<String>,
    #[serde(default)]
    evidence_links: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    agent_context: String,
}

/// Parses a backend plan document, filling per-phase defaults. Fails on
/// JSON/schema errors and on evidence links that name no command.
pub fn parse_plan_document(text: &str) -> Result<BootstrapPlan, String> {
    let doc: PlanDocument = serde_json::from_str(strip_fence(text)).map_err(|e| format!("plan schema: {e}"))?;
    let list = |v: Vec<CommandDoc>, p| v.into_iter().map(|c| c.into_spec(p)).collect::<Vec<_>>();
    let plan = BootstrapPlan {
        install_commands: list(doc.install_commands, Phase::Install),
        doctor_commands: list(doc.doctor_commands, Phase::Doctor),
        goals: VerificationGoals {
            minimal_verify: doc.minimal_verify.into_spec(Phase::MinimalVerify),
            strongest_verify: doc.strongest_verify.map(|c| c.into_spec(Phase::StrongestVerify)),
            run_probes: list(doc.run_probes, Phase::RunProbes),
        },
        constraints_notes: doc.constraints_notes,
        evidence_links: doc.evidence_links,
        agent_context: doc.agent_context,
    };
    for key in plan.evidence_links.keys() {
        let loc: CommandLocator = key.parse().map_err(|e| format!("evidence_links: {e}"))?;
        if plan.command(loc).is_none() {
            return Err(format!("evidence_links: `{key}` names no command"));
        }
    }
    Ok(plan)
}

#[derive(Debug, Clone)]
pub struct GeneratedPlan {
    pub plan: BootstrapPlan,
    pub attempts: usize,
    /// Warn-severity findings on the accepted plan.
    pub warnings: Vec<ConstraintViolation>,
    pub responses: Vec<BackendResponse>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("planner produced no valid plan after {attempts} attempts: {last_error}")]
    StructuredOutputExhausted { attempts: usize, last_error: String },
    #[error("planner backend unavailable: {0}")]
    BackendUnavailable(String),
}

/// Asks the planner backend for a plan. A response counts as valid only when
/// it parses and has no reject-severity constraint violations; every other
/// response consumes one of `retry_budget` attempts.
pub fn generate_plan(
    discovery: &DiscoveryReport,
    ci: &CiEvidenceReport,
    backend: &dyn Backend,
    retry_budget: usize,
    ledger: &TokenLedger,
) -> Result<GeneratedPlan, PlanError> {
    let ctx = PlanContext { repo_nonempty: !discovery.structure_summary.entries.is_empty() };
    let request = build_plan_request(discovery, ci);
    let result = request_structured(backend, &request, retry_budget, ledger, |text| {
        let plan = parse_plan_document(text)?;
        let violations = validate_plan(&plan, &ctx);
        if has_rejects(&violations) {
            let msgs: Vec<String> =
                violations.iter().filter(|v| v.severity == super::Severity::Reject).map(|v| v.to_string()).collect();
            return Err(format!("constraint violations: {}", msgs.join("; ")));
        }
        Ok((plan, violations))
    });
    match result {
        Ok(s) => {
            let (plan, warnings) = s.value;
            Ok(GeneratedPlan { plan, attempts: s.attempts, warnings, responses: s.responses })
        }
        Err(BackendError::StructuredOutputExhausted { attempts, last_error }) => {
            Err(PlanError::StructuredOutputExhausted { attempts, last_error })
        }
        Err(BackendError::TransportError(e)) => Err(PlanError::BackendUnavailable(e)),
    }
}
