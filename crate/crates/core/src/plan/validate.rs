//! Deterministic command-constraint validator and risk screen.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Component, Path};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::patterns::{is_degenerate_cmd, is_mutating, is_test_like, risk_matches, swallows_failure, RiskKind};
use super::{BootstrapPlan, CommandLocator, Phase};
use crate::shell::overlap_tokens;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Reject,
    Warn,
}

/// Every rule the validator can emit: `(rule_id, severity, summary)`.
/// Risk screening adds `risky-<kind>` warnings on top of these.
pub const RULE_TABLE: &[(&str, Severity, &str)] = &[
    ("empty-command", Severity::Reject, "command string is empty"),
    ("reason-missing", Severity::Reject, "command has no reason"),
    ("reason-mismatch", Severity::Reject, "reason shares no token with the command"),
    ("cwd-escape", Severity::Reject, "cwd is absolute or leaves the repository"),
    ("nonpositive-timeout", Severity::Reject, "timeout must be positive"),
    ("doctor-mutation", Severity::Reject, "doctor commands must be read-only"),
    ("verify-in-install", Severity::Reject, "test commands belong in verification, not install"),
    ("verify-in-doctor", Severity::Reject, "test commands belong in verification, not doctor"),
    ("install-duplicates-verify", Severity::Reject, "install repeats the minimal verification command"),
    ("degenerate-verify", Severity::Reject, "minimal verification cannot fail meaningfully"),
    ("swallowed-failure", Severity::Reject, "verification command hides its own failure"),
    ("strongest-provenance", Severity::Reject, "strongest verification lacks CI or build evidence"),
    ("weak-verify", Severity::Warn, "verification is weak because the repository is empty"),
    ("degenerate-strongest", Severity::Warn, "strongest verification is degenerate"),
    ("host-path", Severity::Warn, "command references an absolute host path"),
    ("risky-privilege", Severity::Warn, "privilege escalation"),
    ("risky-recursive-delete", Severity::Warn, "recursive forced deletion"),
    ("risky-remote-installer", Severity::Warn, "remote script piped into a shell"),
    ("risky-checkout-mutation", Severity::Warn, "command mutates the checkout"),
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintViolation {
    pub rule_id: String,
    pub severity: Severity,
    pub target: CommandLocator,
    pub message: String,
}

impl fmt::Display for ConstraintViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at {}: {}", self.rule_id, self.target, self.message)
    }
}

/// Facts about the repository the validator cannot read off the plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlanContext {
    pub repo_nonempty: bool,
}

impl Default for PlanContext {
    fn default() -> Self {
        Self { repo_nonempty: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WarningKind {
    Privilege,
    RecursiveDelete,
    RemoteInstaller,
    CheckoutMutation,
    /// A warn-severity validator finding.
    Policy,
}

impl From<RiskKind> for WarningKind {
    fn from(k: RiskKind) -> Self {
        match k {
            RiskKind::Privilege => WarningKind::Privilege,
            RiskKind::RecursiveDelete => WarningKind::RecursiveDelete,
            RiskKind::RemoteInstaller => WarningKind::RemoteInstaller,
            RiskKind::CheckoutMutation => WarningKind::CheckoutMutation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SafetyWarning {
    pub kind: WarningKind,
    pub target: CommandLocator,
    pub command: String,
    pub detail: String,
}

impl SafetyWarning {
    /// Warn-severity validator findings are recorded next to risk hits.
    pub fn from_violation(v: &ConstraintViolation, plan: &BootstrapPlan) -> Self {
        let kind = v
            .rule_id
            .strip_prefix("risky-")
            .and_then(|k| serde_json::from_value(serde_json::Value::String(k.to_string())).ok())
            .unwrap_or(WarningKind::Policy);
        Self {
            kind,
            target: v.target,
            command: plan.command(v.target).map(|c| c.cmd.clone()).unwrap_or_default(),
            detail: format!("{}: {}", v.rule_id, v.message),
        }
    }
}

static HOST_PATH_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"(^|[\s='"])(/home/|/Users/|/root/|[A-Za-z]:\\)"#).expect("host path"));

fn cwd_escapes(cwd: &str) -> bool {
    let path = Path::new(cwd);
    if path.is_absolute() || cwd.starts_with('~') || cwd.contains('\\') {
        return true;
    }
    let mut depth: i64 = 0;
    for c in path.components() {
        match c {
            Component::ParentDir => depth -= 1,
            Component::Normal(_) => depth += 1,
            Component::CurDir => {}
            _ => return true,
        }
        if depth < 0 {
            return true;
        }
    }
    false
}

/// Checks a plan against the command constraints. Total and read-only.
pub fn validate_plan(plan: &BootstrapPlan, ctx: &PlanContext) -> Vec<ConstraintViolation> {
    let mut out = Vec::new();
    let mut push = |rule: &str, target: CommandLocator, message: String| {
        let severity = RULE_TABLE.iter().find(|(id, ..)| *id == rule).map(|(_, s, _)| *s).expect("rule in table");
        out.push(ConstraintViolation { rule_id: rule.to_string(), severity, target, message });
    };

    for (loc, c) in plan.all_commands() {
        if c.cmd.trim().is_empty() {
            push("empty-command", loc, "empty command".into());
            continue;
        }
        if c.reason.trim().is_empty() {
            push("reason-missing", loc, format!("`{}` has no reason", c.cmd));
        } else {
            let cmd_tokens: BTreeSet<String> = overlap_tokens(&c.cmd).into_iter().collect();
            if !overlap_tokens(&c.reason).iter().any(|t| cmd_tokens.contains(t)) {
                push("reason-mismatch", loc, format!("reason `{}` does not describe `{}`", c.reason, c.cmd));
            }
        }
        if cwd_escapes(&c.cwd) {
            push("cwd-escape", loc, format!("cwd `{}` is outside the repository", c.cwd));
        }
        if c.timeout_s == 0 {
            push("nonpositive-timeout", loc, "timeout_s is 0".into());
        }
        if HOST_PATH_RE.is_match(&c.cmd) {
            push("host-path", loc, format!("`{}` refers to a host-specific path", c.cmd));
        }
        match loc.phase {
            Phase::Install if is_test_like(&c.cmd) => {
                push("verify-in-install", loc, format!("`{}` runs tests during install", c.cmd));
            }
            Phase::Doctor => {
                if is_test_like(&c.cmd) {
                    push("verify-in-doctor", loc, format!("`{}` runs tests during doctor", c.cmd));
                }
                if is_mutating(&c.cmd) {
                    push("doctor-mutation", loc, format!("`{}` modifies the environment", c.cmd));
                }
            }
            Phase::MinimalVerify | Phase::StrongestVerify if swallows_failure(&c.cmd) => {
                push("swallowed-failure", loc, format!("`{}` cannot report failure", c.cmd));
            }
            _ => {}
        }
    }

    let minimal = plan.minimal_verify();
    let mloc = CommandLocator::new(Phase::MinimalVerify, 0);
    if !minimal.cmd.trim().is_empty() && is_degenerate_cmd(&minimal.cmd) {
        if ctx.repo_nonempty {
            push("degenerate-verify", mloc, format!("`{}` does not exercise the repository", minimal.cmd));
        } else {
            push("weak-verify", mloc, format!("`{}` only inspects an empty repository", minimal.cmd));
        }
    }
    for (i, c) in plan.install_commands.iter().enumerate() {
        if !c.cmd.trim().is_empty() && c.cmd.trim() == minimal.cmd.trim() {
            push(
                "install-duplicates-verify",
                CommandLocator::new(Phase::Install, i),
                format!("`{}` is also the minimal verification", c.cmd),
            );
        }
    }
    if let Some(s) = plan.strongest_verify() {
        let sloc = CommandLocator::new(Phase::StrongestVerify, 0);
        if !s.provenance.is_evidence() {
            push("strongest-provenance", sloc, format!("`{}` is not backed by CI or build evidence", s.cmd));
        }
        if is_degenerate_cmd(&s.cmd) {
            push("degenerate-strongest", sloc, format!("`{}` does not exercise the repository", s.cmd));
        }
    }

    for w in screen_risky_commands(plan) {
        let rule = format!(
            "risky-{}",
            serde_json::to_value(w.kind).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
        );
        push(&rule, w.target, w.detail);
    }
    out
}

pub fn has_rejects(violations: &[ConstraintViolation]) -> bool {
    violations.iter().any(|v| v.severity == Severity::Reject)
}

/// One warning per (command, risk kind) match; risky commands still run.
pub fn screen_risky_commands(plan: &BootstrapPlan) -> Vec<SafetyWarning> {
    plan.all_commands()
        .flat_map(|(loc, c)| {
            risk_matches(&c.cmd).into_iter().map(move |(kind, matched)| SafetyWarning {
                kind: kind.into(),
                target: loc,
                command: c.cmd.clone(),
                detail: matched,
            })
        })
        .collect()
}
