use std::collections::{BTreeMap, BTreeSet};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::contract::BootstrapContract;
use crate::evidence::{NonLocalTable, StepContext};
use crate::plan::{classify_verify, is_degenerate_cmd, BootstrapPlan, CommandLocator, CommandSpec};
use crate::shell::{basename, program_words, split_segments};
use crate::verifier::ExecutionTrace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    VerifyWeakened,
    StrongestDroppedWithoutEvidence,
    EvidenceCommandDeleted,
    PlanGoalDrift,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SanityViolation {
    pub kind: ViolationKind,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SanityVerdict {
    pub accepted: bool,
    pub violations: Vec<SanityViolation>,
}

impl SanityVerdict {
    fn from(violations: Vec<SanityViolation>) -> Self {
        Self { accepted: violations.is_empty(), violations }
    }

    pub fn kinds(&self) -> Vec<ViolationKind> {
        self.violations.iter().map(|v| v.kind).collect()
    }
}

/// Programs run by the substantive segments of a command.
fn programs(cmd: &str) -> BTreeSet<String> {
    split_segments(cmd)
        .iter()
        .filter(|s| !is_degenerate_cmd(&s.text))
        .filter_map(|s| program_words(&s.text).first().map(|w| basename(w).to_string()))
        .filter(|p| !matches!(p.as_str(), "cd" | "export" | "set" | "source" | "."))
        .collect()
}

fn implicated(cmd: &str, history: &[ExecutionTrace]) -> bool {
    history.iter().flat_map(|t| &t.stage_results).any(|r| r.failed_command.as_deref() == Some(cmd))
}

/// Runtime symptoms of a dependency the local verifier cannot provide:
/// credentials, service containers, accelerators, a container daemon.
static TRACE_NON_LOCAL: LazyLock<Vec<Regex>> = LazyLock::new(|| {
    [
        r"(?i)(api[_ -]?key|token|secret|credential)\w*\b.*\b(not set|missing|required|unset|empty|invalid)\b",
        r"(?i)\b(missing|no|unset)\b.*\b(api[_ -]?key|token|secret|credentials)\b",
        r"(?i)could not connect to (server|database|redis|postgres\w*|mysql|mongo\w*)",
        r"(?i)(ECONNREFUSED|connection refused)\D*(5432|3306|6379|27017|9200|5672)\b",
        r"(?i)\bcuda\b.*\b(unavailable|not available|error|driver)|no gpu|nvidia-smi",
        r"(?i)cannot connect to the docker daemon",
    ]
    .iter()
    .map(|p| Regex::new(p).expect("non-local trace pattern"))
    .collect()
});

/// Non-local dependency evidence in any trace output.
fn non_local_evidence(history: &[ExecutionTrace]) -> Option<String> {
    let table = NonLocalTable::default();
    let ctx = StepContext::default();
    history.iter().flat_map(|t| &t.stage_results).find_map(|r| {
        let out = r.output();
        if let Some(m) = TRACE_NON_LOCAL.iter().find_map(|re| re.find(&out)) {
            return Some(format!("{} stage output: {}", r.stage, m.as_str()));
        }
        let f = table.classify(&out, &ctx);
        f.first().map(|f| format!("{} stage output: {}", r.stage, f.detail))
    })
}

/// Guards a repaired plan against reward hacking: weakened verification,
/// silently dropped strongest target, deleted evidence-backed commands, and
/// a minimal check retargeted at something else. Pure.
pub fn sanity_check(
    original: &BootstrapPlan,
    evidence_map: &BTreeMap<String, Vec<String>>,
    strongest_target: Option<&CommandSpec>,
    repaired: &BootstrapPlan,
    trace_history: &[ExecutionTrace],
) -> SanityVerdict {
    let mut v = Vec::new();
    let orig_min = &original.goals.minimal_verify;
    let new_min = &repaired.goals.minimal_verify;

    if new_min.cmd != orig_min.cmd {
        let (was, now) = (classify_verify(&orig_min.cmd), classify_verify(&new_min.cmd));
        if is_degenerate_cmd(&new_min.cmd) || now < was {
            v.push(SanityViolation {
                kind: ViolationKind::VerifyWeakened,
                detail: format!("minimal_verify `{}` ({was:?}) -> `{}` ({now:?})", orig_min.cmd, new_min.cmd),
            });
        } else if programs(&orig_min.cmd).is_disjoint(&programs(&new_min.cmd))
            && !implicated(&orig_min.cmd, trace_history)
        {
            v.push(SanityViolation {
                kind: ViolationKind::PlanGoalDrift,
                detail: format!(
                    "minimal_verify retargeted from `{}` to `{}` without a failing trace",
                    orig_min.cmd, new_min.cmd
                ),
            });
        }
    }

    if let Some(target) = strongest_target {
        let weaker = match &repaired.goals.strongest_verify {
            None => Some("removed".to_string()),
            Some(s) if classify_verify(&s.cmd) < classify_verify(&target.cmd) || is_degenerate_cmd(&s.cmd) => {
                Some(format!("replaced by weaker `{}`", s.cmd))
            }
            Some(_) => None,
        };
        if let Some(what) = weaker {
            if non_local_evidence(trace_history).is_none() {
                v.push(SanityViolation {
                    kind: ViolationKind::StrongestDroppedWithoutEvidence,
                    detail: format!("strongest_verify `{}` {what}; no trace shows a non-local dependency", target.cmd),
                });
            }
        }
    }

    let remaining: BTreeSet<&str> = repaired.all_commands().map(|(_, c)| c.cmd.as_str()).collect();
    for (loc, cmd) in original.all_commands() {
        let linked = evidence_map.get(&loc.to_string()).is_some_and(|r| !r.is_empty()) || cmd.provenance.is_evidence();
        if linked && !remaining.contains(cmd.cmd.as_str()) && !implicated(&cmd.cmd, trace_history) {
            // Weakening of the verify slots is reported above.
            if matches!(
                loc,
                CommandLocator { phase: crate::plan::Phase::MinimalVerify | crate::plan::Phase::StrongestVerify, .. }
            ) {
                continue;
            }
            v.push(SanityViolation {
                kind: ViolationKind::EvidenceCommandDeleted,
                detail: format!("{loc} `{}` is evidence-backed and no trace shows it failing", cmd.cmd),
            });
        }
    }
    SanityVerdict::from(v)
}

/// [`sanity_check`] against a materialized contract.
pub fn sanity_check_contract(
    original: &BootstrapPlan,
    evidence_map: &BTreeMap<String, Vec<String>>,
    strongest_target: Option<&CommandSpec>,
    repaired: &BootstrapContract,
    trace_history: &[ExecutionTrace],
) -> SanityVerdict {
    sanity_check(original, evidence_map, strongest_target, &repaired.plan, trace_history)
}
