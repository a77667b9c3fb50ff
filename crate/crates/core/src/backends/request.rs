use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::contract::FailurePlaybook;
use crate::evidence::{CiEvidenceReport, DiscoveryReport};
use crate::json::to_compact_string;
use crate::plan::BootstrapPlan;
use crate::repair::repair_target;
use crate::verifier::ExecutionTrace;

pub const PLAN_SCHEMA_ID: &str = "bootstrap_plan/v1";
pub const REPAIR_SCHEMA_ID: &str = "repair_delta/v1";
pub const PLAN_TIMEOUT_S: u64 = 300;
pub const REPAIR_TIMEOUT_S: u64 = 180;

pub const DISCOVERY_LABEL: &str = "DiscoveryReport";
pub const CI_LABEL: &str = "CIEvidenceReport";
pub const PLAN_LABEL: &str = "BootstrapPlan";
pub const VERIFIER_LABEL: &str = "VerifierResult";
pub const PLAYBOOK_LABEL: &str = "FailurePlaybook";
pub const REJECTION_LABEL: &str = "RejectedProposal";

/// Rules every backend-produced plan or delta must respect. The validator
/// and sanity check enforce the same rules after the fact.
pub const CONSTRAINT_BLOCK: &str = "\
Command rules:
- Every command runs non-interactively with /bin/sh from the repository root unless `cwd` names a subdirectory. Never use absolute host paths or leave the repository.
- Stages run in order in one environment: install_commands, doctor_commands, minimal_verify, strongest_verify, run_probes. A failing command stops its stage.
- install_commands prepare dependencies and build outputs. Prefer the package manager the lockfile names.
- doctor_commands are read-only health checks of the prepared environment: no installs, no file writes.
- Tests, imports and build checks go only into minimal_verify, strongest_verify or run_probes, never into install or doctor.
- minimal_verify must exercise the repository itself. A version query, `true`, `echo`, a listing or printing one file does not count.
- Never hide failures (`|| true`, `; exit 0`).
- strongest_verify must come from CI or build files present in the evidence; omit it otherwise.
- Each reason must describe its command and share at least one word with it.
- Do not edit the repository's own source code to make checks pass.
- Risky commands (sudo, recursive deletion, piping downloads into a shell, rewriting the checkout) are allowed only when necessary; they are logged as warnings.
Repair rules:
- Edit the current plan with the smallest delta. Indices are zero-based positions in the current plan.
- Keep verification targets intact unless the verifier output proves they cannot run locally.
- Remove a command only when the verifier output shows that command failing.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestKind {
    Plan,
    Repair,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextDocument {
    pub label: String,
    /// Compact JSON.
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendRequest {
    pub kind: RequestKind,
    pub schema_id: String,
    pub context_documents: Vec<ContextDocument>,
    pub constraint_block: String,
    pub timeout_s: u64,
}

impl BackendRequest {
    pub fn document(&self, label: &str) -> Option<&str> {
        self.context_documents.iter().find(|d| d.label == label).map(|d| d.body.as_str())
    }

    pub fn with_document(mut self, label: &str, body: String) -> Self {
        self.context_documents.push(ContextDocument { label: label.to_string(), body });
        self
    }
}

/// Discovery report followed by CI report, both always present.
pub fn build_plan_request(discovery: &DiscoveryReport, ci: &CiEvidenceReport) -> BackendRequest {
    BackendRequest {
        kind: RequestKind::Plan,
        schema_id: PLAN_SCHEMA_ID.into(),
        context_documents: vec![
            ContextDocument { label: DISCOVERY_LABEL.into(), body: to_compact_string(discovery) },
            ContextDocument { label: CI_LABEL.into(), body: to_compact_string(ci) },
        ],
        constraint_block: CONSTRAINT_BLOCK.into(),
        timeout_s: PLAN_TIMEOUT_S,
    }
}

/// Current plan followed by the verifier result (trace plus diagnosed
/// failure signature).
pub fn build_repair_request(plan: &BootstrapPlan, trace: &ExecutionTrace) -> BackendRequest {
    let signature = repair_target(trace);
    let verifier = json!({ "trace": trace, "signature": signature });
    BackendRequest {
        kind: RequestKind::Repair,
        schema_id: REPAIR_SCHEMA_ID.into(),
        context_documents: vec![
            ContextDocument { label: PLAN_LABEL.into(), body: to_compact_string(plan) },
            ContextDocument { label: VERIFIER_LABEL.into(), body: to_compact_string(&verifier) },
        ],
        constraint_block: CONSTRAINT_BLOCK.into(),
        timeout_s: REPAIR_TIMEOUT_S,
    }
}

impl BackendRequest {
    pub fn with_playbook(self, playbook: &FailurePlaybook) -> Self {
        self.with_document(PLAYBOOK_LABEL, to_compact_string(playbook))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evidence::StructureSummary;
    use crate::plan::{CommandSpec, Phase};

    fn empty_discovery() -> DiscoveryReport {
        DiscoveryReport {
            languages: vec![],
            package_managers: vec![],
            important_files: vec![],
            structure_summary: StructureSummary { entries: vec![], files_examined: 0, max_depth: 6, truncated: false },
            evidence: vec![],
        }
    }

    #[test]
    fn plan_request_orders_documents() {
        let r = build_plan_request(&empty_discovery(), &CiEvidenceReport::default());
        let labels: Vec<_> = r.context_documents.iter().map(|d| d.label.as_str()).collect();
        assert_eq!(labels, [DISCOVERY_LABEL, CI_LABEL]);
        // The empty CI report is sent explicitly.
        assert_eq!(
            r.document(CI_LABEL).unwrap(),
            r#"{"workflow_files":[],"candidate_commands":[],"non_local_features":[]}"#
        );
        assert_eq!(r.timeout_s, 300);
        assert_eq!(r.constraint_block, CONSTRAINT_BLOCK);
    }

    #[test]
    fn repair_request_orders_documents() {
        let plan = BootstrapPlan::new(CommandSpec::new("make test", "make test", Phase::MinimalVerify));
        let trace = crate::verifier::tests_support::trace_with(&[]);
        let r = build_repair_request(&plan, &trace);
        let labels: Vec<_> = r.context_documents.iter().map(|d| d.label.as_str()).collect();
        assert_eq!(labels, [PLAN_LABEL, VERIFIER_LABEL]);
        assert_eq!(r.timeout_s, 180);
        let plan_back: BootstrapPlan = serde_json::from_str(r.document(PLAN_LABEL).unwrap()).unwrap();
        assert_eq!(plan_back, plan);
    }
}
