use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::plan::{
    has_rejects, validate_plan, BootstrapPlan, CommandDoc, CommandLocator, CommandSpec, ConstraintViolation, Phase,
    PlanContext, Severity,
};

/// Plan aspects reachable through `update_field`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Cwd,
    TimeoutS,
    AgentContext,
    EvidenceLinks,
    /// Owned by the pipeline; accepted on the wire but never applied.
    FailurePlaybook,
}

impl Field {
    pub fn as_str(self) -> &'static str {
        match self {
            Field::Cwd => "cwd",
            Field::TimeoutS => "timeout_s",
            Field::AgentContext => "agent_context",
            Field::EvidenceLinks => "evidence_links",
            Field::FailurePlaybook => "failure_playbook",
        }
    }
}

/// One localized edit. Indices are zero-based positions in the plan as it
/// stands after the preceding edits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Edit {
    InsertCommands {
        stage: Phase,
        index: usize,
        commands: Vec<CommandDoc>,
    },
    RemoveCommands {
        stage: Phase,
        indices: Vec<usize>,
    },
    ReplaceCommands {
        stage: Phase,
        index: usize,
        command: CommandDoc,
    },
    MoveCommands {
        stage: Phase,
        from: usize,
        to: usize,
    },
    ReplaceDoctor {
        commands: Vec<CommandDoc>,
    },
    ReplaceInstall {
        commands: Vec<CommandDoc>,
    },
    SetMinimalVerify {
        command: CommandDoc,
    },
    SetStrongestVerify {
        command: Option<CommandDoc>,
    },
    UpdateField {
        field: Field,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target: Option<CommandLocator>,
        value: Value,
    },
}

impl Edit {
    pub fn op(&self) -> &'static str {
        match self {
            Edit::InsertCommands { .. } => "insert_commands",
            Edit::RemoveCommands { .. } => "remove_commands",
            Edit::ReplaceCommands { .. } => "replace_commands",
            Edit::MoveCommands { .. } => "move_commands",
            Edit::ReplaceDoctor { .. } => "replace_doctor",
            Edit::ReplaceInstall { .. } => "replace_install",
            Edit::SetMinimalVerify { .. } => "set_minimal_verify",
            Edit::SetStrongestVerify { .. } => "set_strongest_verify",
            Edit::UpdateField { .. } => "update_field",
        }
    }

    /// Short human-readable form, e.g. `insert_commands install@2`.
    pub fn summary(&self) -> String {
        match self {
            Edit::InsertCommands { stage, index, commands } => {
                format!("insert_commands {stage}@{index} [{}]", join_cmds(commands))
            }
            Edit::RemoveCommands { stage, indices } => format!("remove_commands {stage}{indices:?}"),
            Edit::ReplaceCommands { stage, index, command } => {
                format!("replace_commands {stage}@{index} `{}`", command.cmd)
            }
            Edit::MoveCommands { stage, from, to } => format!("move_commands {stage} {from}->{to}"),
            Edit::ReplaceDoctor { commands } => format!("replace_doctor [{}]", join_cmds(commands)),
            Edit::ReplaceInstall { commands } => format!("replace_install [{}]", join_cmds(commands)),
            Edit::SetMinimalVerify { command } => format!("set_minimal_verify `{}`", command.cmd),
            Edit::SetStrongestVerify { command: Some(c) } => format!("set_strongest_verify `{}`", c.cmd),
            Edit::SetStrongestVerify { command: None } => "set_strongest_verify none".into(),
            Edit::UpdateField { field, target: Some(t), .. } => format!("update_field {} {t}", field.as_str()),
            Edit::UpdateField { field, target: None, .. } => format!("update_field {}", field.as_str()),
        }
    }
}

fn join_cmds(c: &[CommandDoc]) -> String {
    c.iter().map(|c| format!("`{}`", c.cmd)).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RepairDelta {
    #[serde(default)]
    pub edits: Vec<Edit>,
    #[serde(default)]
    pub rationale: String,
}

impl RepairDelta {
    pub fn new(edits: Vec<Edit>, rationale: impl Into<String>) -> Self {
        Self { edits, rationale: rationale.into() }
    }

    pub fn is_empty(&self) -> bool {
        self.edits.is_empty()
    }

    pub fn summary(&self) -> String {
        if self.edits.is_empty() {
            return "no edits".into();
        }
        self.edits.iter().map(Edit::summary).collect::<Vec<_>>().join("; ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ApplyError {
    #[error("edit {edit}: index {index} out of bounds for {stage} (len {len})")]
    IndexOutOfBounds { edit: usize, stage: Phase, index: usize, len: usize },
    #[error("edit {edit}: {reason}")]
    InvalidEdit { edit: usize, reason: String },
    #[error("edited plan rejected: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    ResultingPlanRejected(Vec<ConstraintViolation>),
}

/// Fills a command document's omitted fields from the command it replaces.
fn merged(doc: &CommandDoc, base: Option<&CommandSpec>, phase: Phase) -> CommandSpec {
    let Some(base) = base else { return doc.clone().into_spec(phase) };
    CommandSpec {
        cmd: doc.cmd.clone(),
        cwd: doc.cwd.clone().filter(|c| !c.is_empty()).unwrap_or_else(|| base.cwd.clone()),
        timeout_s: doc.timeout_s.unwrap_or(base.timeout_s),
        reason: if doc.reason.is_empty() { base.reason.clone() } else { doc.reason.clone() },
        provenance: doc.provenance.clone().unwrap_or_else(|| base.provenance.clone()),
    }
}

fn list_mut(plan: &mut BootstrapPlan, phase: Phase, edit: usize) -> Result<&mut Vec<CommandSpec>, ApplyError> {
    match phase {
        Phase::Install => Ok(&mut plan.install_commands),
        Phase::Doctor => Ok(&mut plan.doctor_commands),
        Phase::RunProbes => Ok(&mut plan.goals.run_probes),
        _ => Err(ApplyError::InvalidEdit { edit, reason: format!("{phase} is not a command list") }),
    }
}

/// Rewrites evidence-link keys of one phase through `remap` (old index ->
/// new index, or `None` to drop the link).
fn remap_links(links: &mut BTreeMap<String, Vec<String>>, phase: Phase, remap: impl Fn(usize) -> Option<usize>) {
    let old = std::mem::take(links);
    for (key, refs) in old {
        match key.parse::<CommandLocator>() {
            Ok(loc) if loc.phase == phase => {
                if let Some(i) = remap(loc.index) {
                    links.insert(CommandLocator::new(phase, i).to_string(), refs);
                }
            }
            _ => {
                links.insert(key, refs);
            }
        }
    }
}

fn oob(edit: usize, stage: Phase, index: usize, len: usize) -> ApplyError {
    ApplyError::IndexOutOfBounds { edit, stage, index, len }
}

fn apply_one(plan: &mut BootstrapPlan, n: usize, edit: &Edit) -> Result<(), ApplyError> {
    match edit {
        Edit::InsertCommands { stage, index, commands } => {
            let list = list_mut(plan, *stage, n)?;
            if *index > list.len() {
                return Err(oob(n, *stage, *index, list.len()));
            }
            let specs: Vec<CommandSpec> = commands.iter().map(|c| c.clone().into_spec(*stage)).collect();
            let k = specs.len();
            list.splice(*index..*index, specs);
            let at = *index;
            remap_links(&mut plan.evidence_links, *stage, |i| Some(if i >= at { i + k } else { i }));
        }
        Edit::RemoveCommands { stage, indices } => {
            let list = list_mut(plan, *stage, n)?;
            let mut sorted = indices.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != indices.len() {
                return Err(ApplyError::InvalidEdit { edit: n, reason: "duplicate indices".into() });
            }
            if let Some(&bad) = sorted.iter().find(|&&i| i >= list.len()) {
                return Err(oob(n, *stage, bad, list.len()));
            }
            for &i in sorted.iter().rev() {
                list.remove(i);
            }
            remap_links(&mut plan.evidence_links, *stage, |i| {
                (!sorted.contains(&i)).then(|| i - sorted.iter().filter(|&&r| r < i).count())
            });
        }
        Edit::ReplaceCommands { stage, index, command } => {
            let base = plan.command(CommandLocator::new(*stage, *index)).cloned();
            let len = plan.commands(*stage).len();
            let Some(base) = base else { return Err(oob(n, *stage, *index, len)) };
            let spec = merged(command, Some(&base), *stage);
            let changed = spec.cmd != base.cmd;
            *plan.command_mut(CommandLocator::new(*stage, *index)).expect("in bounds") = spec;
            if changed {
                plan.evidence_links.remove(&CommandLocator::new(*stage, *index).to_string());
            }
        }
        Edit::MoveCommands { stage, from, to } => {
            let list = list_mut(plan, *stage, n)?;
            let len = list.len();
            if *from >= len {
                return Err(oob(n, *stage, *from, len));
            }
            if *to >= len {
                return Err(oob(n, *stage, *to, len));
            }
            let c = list.remove(*from);
            list.insert(*to, c);
            let (f, t) = (*from, *to);
            remap_links(&mut plan.evidence_links, *stage, |i| {
                Some(if i == f {
                    t
                } else if f < t && i > f && i <= t {
                    i - 1
                } else if t < f && i >= t && i < f {
                    i + 1
                } else {
                    i
                })
            });
        }
        Edit::ReplaceDoctor { commands } => {
            plan.doctor_commands = commands.iter().map(|c| c.clone().into_spec(Phase::Doctor)).collect();
            remap_links(&mut plan.evidence_links, Phase::Doctor, |_| None);
        }
        Edit::ReplaceInstall { commands } => {
            plan.install_commands = commands.iter().map(|c| c.clone().into_spec(Phase::Install)).collect();
            remap_links(&mut plan.evidence_links, Phase::Install, |_| None);
        }
        Edit::SetMinimalVerify { command } => {
            let spec = merged(command, Some(&plan.goals.minimal_verify), Phase::MinimalVerify);
            if spec.cmd != plan.goals.minimal_verify.cmd {
                plan.evidence_links.remove(&CommandLocator::new(Phase::MinimalVerify, 0).to_string());
            }
            plan.goals.minimal_verify = spec;
        }
        Edit::SetStrongestVerify { command } => {
            let spec =
                command.as_ref().map(|c| merged(c, plan.goals.strongest_verify.as_ref(), Phase::StrongestVerify));
            if spec.as_ref().map(|s| &s.cmd) != plan.goals.strongest_verify.as_ref().map(|s| &s.cmd) {
                plan.evidence_links.remove(&CommandLocator::new(Phase::StrongestVerify, 0).to_string());
            }
            plan.goals.strongest_verify = spec;
        }
        Edit::UpdateField { field, target, value } => apply_field(plan, n, *field, *target, value)?,
    }
    Ok(())
}

fn apply_field(
    plan: &mut BootstrapPlan,
    n: usize,
    field: Field,
    target: Option<CommandLocator>,
    value: &Value,
) -> Result<(), ApplyError> {
    let invalid = |reason: &str| ApplyError::InvalidEdit { edit: n, reason: reason.to_string() };
    fn target_cmd(
        plan: &mut BootstrapPlan,
        n: usize,
        target: Option<CommandLocator>,
    ) -> Result<&mut CommandSpec, ApplyError> {
        let loc = target
            .ok_or_else(|| ApplyError::InvalidEdit { edit: n, reason: "update_field needs a target locator".into() })?;
        let len = plan.commands(loc.phase).len();
        plan.command_mut(loc).ok_or(oob(n, loc.phase, loc.index, len))
    }
    match field {
        Field::Cwd => {
            let cwd = value.as_str().ok_or_else(|| invalid("cwd must be a string"))?.to_string();
            target_cmd(plan, n, target)?.cwd = if cwd.is_empty() { ".".into() } else { cwd };
        }
        Field::TimeoutS => {
            let t = value.as_u64().ok_or_else(|| invalid("timeout_s must be a non-negative integer"))?;
            target_cmd(plan, n, target)?.timeout_s = t;
        }
        Field::AgentContext => {
            plan.agent_context = value.as_str().ok_or_else(|| invalid("agent_context must be a string"))?.to_string();
        }
        Field::EvidenceLinks => match target {
            Some(loc) => {
                let refs: Vec<String> =
                    serde_json::from_value(value.clone()).map_err(|e| invalid(&format!("evidence_links: {e}")))?;
                if plan.command(loc).is_none() {
                    return Err(oob(n, loc.phase, loc.index, plan.commands(loc.phase).len()));
                }
                plan.evidence_links.insert(loc.to_string(), refs);
            }
            None => {
                let map: BTreeMap<String, Vec<String>> =
                    serde_json::from_value(value.clone()).map_err(|e| invalid(&format!("evidence_links: {e}")))?;
                for key in map.keys() {
                    let loc: CommandLocator = key.parse().map_err(|e: String| invalid(&e))?;
                    if plan.command(loc).is_none() {
                        return Err(oob(n, loc.phase, loc.index, plan.commands(loc.phase).len()));
                    }
                }
                plan.evidence_links = map;
            }
        },
        Field::FailurePlaybook => {
            log::info!("ignoring backend edit of the failure playbook");
        }
    }
    Ok(())
}

/// Applies edits in order without validating the result. Untouched aspects
/// of the plan are carried over unchanged.
pub fn apply_edits(plan: &BootstrapPlan, delta: &RepairDelta) -> Result<BootstrapPlan, ApplyError> {
    let mut next = plan.clone();
    for (n, edit) in delta.edits.iter().enumerate() {
        apply_one(&mut next, n, edit)?;
    }
    Ok(next)
}

/// [`apply_edits`], then refuses results with reject-severity violations.
pub fn apply_delta(plan: &BootstrapPlan, delta: &RepairDelta) -> Result<BootstrapPlan, ApplyError> {
    let next = apply_edits(plan, delta)?;
    let violations = validate_plan(&next, &PlanContext::default());
    if has_rejects(&violations) {
        return Err(ApplyError::ResultingPlanRejected(
            violations.into_iter().filter(|v| v.severity == Severity::Reject).collect(),
        ));
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::Provenance;

    fn doc(cmd: &str) -> CommandDoc {
        CommandDoc { cmd: cmd.into(), reason: cmd.into(), cwd: None, timeout_s: None, provenance: None }
    }

    fn plan3() -> BootstrapPlan {
        let mut p = BootstrapPlan::new(
            CommandSpec::new("make test", "run make test", Phase::MinimalVerify)
                .with_provenance(Provenance::File("Makefile".into())),
        );
        p.install_commands =
            ["make deps", "make gen", "make build"].iter().map(|c| CommandSpec::new(*c, *c, Phase::Install)).collect();
        p.evidence_links.insert("install/0".into(), vec!["Makefile".into()]);
        p.evidence_links.insert("install/2".into(), vec!["Makefile".into()]);
        p
    }

    #[test]
    fn identity_delta() {
        let p = plan3();
        assert_eq!(apply_delta(&p, &RepairDelta::default()).unwrap(), p);
    }

    #[test]
    fn replace_keeps_neighbours_and_fills_from_base() {
        let mut p = plan3();
        p.install_commands[1].cwd = "sub".into();
        let d = RepairDelta::new(
            vec![Edit::ReplaceCommands { stage: Phase::Install, index: 1, command: doc("make generate") }],
            "r",
        );
        let q = apply_delta(&p, &d).unwrap();
        assert_eq!(q.install_commands[0], p.install_commands[0]);
        assert_eq!(q.install_commands[2], p.install_commands[2]);
        assert_eq!(q.install_commands[1].cmd, "make generate");
        assert_eq!(q.install_commands[1].cwd, "sub");
    }

    #[test]
    fn move_and_inverse_restore() {
        let p = plan3();
        let d = RepairDelta::new(
            vec![
                Edit::MoveCommands { stage: Phase::Install, from: 0, to: 2 },
                Edit::MoveCommands { stage: Phase::Install, from: 2, to: 0 },
            ],
            "",
        );
        assert_eq!(apply_edits(&p, &d).unwrap(), p);
        let once = apply_edits(&p, &RepairDelta::new(vec![d.edits[0].clone()], "")).unwrap();
        assert_eq!(once.install_commands[2].cmd, "make deps");
        assert_eq!(once.evidence_links.keys().collect::<Vec<_>>(), ["install/1", "install/2"]);
    }

    #[test]
    fn insert_and_remove_shift_links() {
        let p = plan3();
        let q = apply_edits(
            &p,
            &RepairDelta::new(
                vec![Edit::InsertCommands { stage: Phase::Install, index: 1, commands: vec![doc("a"), doc("b")] }],
                "",
            ),
        )
        .unwrap();
        assert_eq!(q.evidence_links.keys().collect::<Vec<_>>(), ["install/0", "install/4"]);
        let r = apply_edits(
            &q,
            &RepairDelta::new(vec![Edit::RemoveCommands { stage: Phase::Install, indices: vec![0, 2] }], ""),
        )
        .unwrap();
        assert_eq!(
            r.install_commands.iter().map(|c| c.cmd.as_str()).collect::<Vec<_>>(),
            ["a", "make gen", "make build"]
        );
        assert_eq!(r.evidence_links.keys().collect::<Vec<_>>(), ["install/2"]);
    }

    #[test]
    fn bounds_and_kinds() {
        let p = plan3();
        let e = apply_edits(
            &p,
            &RepairDelta::new(vec![Edit::RemoveCommands { stage: Phase::Install, indices: vec![3] }], ""),
        );
        assert!(matches!(e, Err(ApplyError::IndexOutOfBounds { index: 3, len: 3, .. })));
        let e = apply_edits(
            &p,
            &RepairDelta::new(
                vec![Edit::InsertCommands { stage: Phase::MinimalVerify, index: 0, commands: vec![] }],
                "",
            ),
        );
        assert!(matches!(e, Err(ApplyError::InvalidEdit { .. })));
    }

    #[test]
    fn weakened_plan_is_rejected() {
        let d = RepairDelta::new(vec![Edit::SetMinimalVerify { command: doc("python3 --version") }], "");
        assert!(matches!(apply_delta(&plan3(), &d), Err(ApplyError::ResultingPlanRejected(_))));
    }

    #[test]
    fn wire_format() {
        let text = r#"{"edits":[
            {"op":"insert_commands","stage":"install","index":3,"commands":[{"cmd":"pip install x","reason":"install x"}]},
            {"op":"update_field","field":"cwd","target":"minimal_verify/0","value":"app"},
            {"op":"set_strongest_verify","command":null}
        ],"rationale":"trace says so"}"#;
        let d: RepairDelta = serde_json::from_str(text).unwrap();
        assert_eq!(d.edits.len(), 3);
        let q = apply_edits(&plan3(), &d).unwrap();
        assert_eq!(q.install_commands.len(), 4);
        assert_eq!(q.goals.minimal_verify.cwd, "app");
        let back: RepairDelta = serde_json::from_str(&serde_json::to_string(&d).unwrap()).unwrap();
        assert_eq!(back, d);
    }
}
