use std::fmt;

use serde::{Deserialize, Serialize};

use super::BootstrapContract;
use crate::plan::{BootstrapPlan, CommandSpec, Phase};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffEntry {
    /// `<stage>-inserted|removed|replaced|moved`, or
    /// `minimal-verify-changed` / `strongest-verify-added|removed|changed`.
    pub kind: String,
    pub stage: Phase,
    /// New-side index for inserted/replaced/moved, old-side for removed.
    pub index: Option<usize>,
    /// Old-side index of a moved command.
    pub from: Option<usize>,
    pub old: Option<String>,
    pub new: Option<String>,
}

impl fmt::Display for DiffEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.from, self.index) {
            (Some(from), Some(to)) => write!(f, "{}({from}->{to})", self.kind),
            (None, Some(i)) => write!(f, "{}({i})", self.kind),
            _ => f.write_str(&self.kind),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractDiff {
    pub entries: Vec<DiffEntry>,
}

impl ContractDiff {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn kinds(&self) -> Vec<String> {
        self.entries.iter().map(ToString::to_string).collect()
    }
}

pub fn diff_contract(old: &BootstrapContract, new: &BootstrapContract) -> ContractDiff {
    diff_plans(&old.plan, &new.plan)
}

fn stage_prefix(phase: Phase) -> &'static str {
    match phase {
        Phase::Install => "install",
        Phase::Doctor => "doctor",
        Phase::RunProbes => "probe",
        Phase::MinimalVerify => "minimal-verify",
        Phase::StrongestVerify => "strongest-verify",
    }
}

/// Structural command diff between two plans.
pub fn diff_plans(old: &BootstrapPlan, new: &BootstrapPlan) -> ContractDiff {
    let mut entries = Vec::new();
    for phase in [Phase::Install, Phase::Doctor] {
        diff_list(phase, old.commands(phase), new.commands(phase), &mut entries);
    }
    if old.goals.minimal_verify != new.goals.minimal_verify {
        entries.push(DiffEntry {
            kind: "minimal-verify-changed".into(),
            stage: Phase::MinimalVerify,
            index: None,
            from: None,
            old: Some(old.goals.minimal_verify.cmd.clone()),
            new: Some(new.goals.minimal_verify.cmd.clone()),
        });
    }
    let kind = match (&old.goals.strongest_verify, &new.goals.strongest_verify) {
        (None, Some(_)) => Some("strongest-verify-added"),
        (Some(_), None) => Some("strongest-verify-removed"),
        (Some(a), Some(b)) if a != b => Some("strongest-verify-changed"),
        _ => None,
    };
    if let Some(kind) = kind {
        entries.push(DiffEntry {
            kind: kind.into(),
            stage: Phase::StrongestVerify,
            index: None,
            from: None,
            old: old.goals.strongest_verify.as_ref().map(|c| c.cmd.clone()),
            new: new.goals.strongest_verify.as_ref().map(|c| c.cmd.clone()),
        });
    }
    diff_list(Phase::RunProbes, old.commands(Phase::RunProbes), new.commands(Phase::RunProbes), &mut entries);
    ContractDiff { entries }
}

/// Index pairs of a longest common subsequence.
fn lcs(a: &[CommandSpec], b: &[CommandSpec]) -> Vec<(usize, usize)> {
    let (n, m) = (a.len(), b.len());
    let mut t = vec![vec![0usize; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            t[i][j] = if a[i] == b[j] { t[i + 1][j + 1] + 1 } else { t[i + 1][j].max(t[i][j + 1]) };
        }
    }
    let (mut i, mut j, mut out) = (0, 0, Vec::new());
    while i < n && j < m {
        if a[i] == b[j] {
            out.push((i, j));
            i += 1;
            j += 1;
        } else if t[i + 1][j] >= t[i][j + 1] {
            i += 1;
        } else {
            j += 1;
        }
    }
    out
}

fn diff_list(phase: Phase, old: &[CommandSpec], new: &[CommandSpec], out: &mut Vec<DiffEntry>) {
    let prefix = stage_prefix(phase);
    let common = lcs(old, new);
    let mut removed: Vec<usize> = (0..old.len()).filter(|i| !common.iter().any(|c| c.0 == *i)).collect();
    let mut inserted: Vec<usize> = (0..new.len()).filter(|j| !common.iter().any(|c| c.1 == *j)).collect();
    let entry = |kind: &str, index, from, o: Option<&CommandSpec>, n: Option<&CommandSpec>| DiffEntry {
        kind: format!("{prefix}-{kind}"),
        stage: phase,
        index,
        from,
        old: o.map(|c| c.cmd.clone()),
        new: n.map(|c| c.cmd.clone()),
    };

    // Identical commands that left the common subsequence moved.
    let mut moves = Vec::new();
    removed.retain(|&i| match inserted.iter().position(|&j| new[j] == old[i]) {
        Some(p) => {
            let j = inserted.remove(p);
            moves.push(entry("moved", Some(j), Some(i), Some(&old[i]), Some(&new[j])));
            false
        }
        None => true,
    });

    // Within each gap between common anchors, pair leftovers as replacements.
    let mut anchors: Vec<(isize, isize)> = vec![(-1, -1)];
    anchors.extend(common.iter().map(|&(i, j)| (i as isize, j as isize)));
    anchors.push((old.len() as isize, new.len() as isize));
    let mut changes = Vec::new();
    for w in anchors.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let gap_old: Vec<usize> =
            removed.iter().copied().filter(|&i| (i as isize) > lo.0 && (i as isize) < hi.0).collect();
        let gap_new: Vec<usize> =
            inserted.iter().copied().filter(|&j| (j as isize) > lo.1 && (j as isize) < hi.1).collect();
        let paired = gap_old.len().min(gap_new.len());
        for k in 0..paired {
            changes.push(entry("replaced", Some(gap_new[k]), None, Some(&old[gap_old[k]]), Some(&new[gap_new[k]])));
        }
        for &i in &gap_old[paired..] {
            changes.push(entry("removed", Some(i), None, Some(&old[i]), None));
        }
        for &j in &gap_new[paired..] {
            changes.push(entry("inserted", Some(j), None, None, Some(&new[j])));
        }
    }
    out.extend(changes);
    out.extend(moves);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan(install: &[&str]) -> BootstrapPlan {
        let mut p = BootstrapPlan::new(CommandSpec::new("make test", "make test", Phase::MinimalVerify));
        p.install_commands = install.iter().map(|c| CommandSpec::new(*c, "x", Phase::Install)).collect();
        p
    }

    #[test]
    fn identity_is_empty() {
        let p = plan(&["a", "b"]);
        assert!(diff_plans(&p, &p).is_empty());
    }

    #[test]
    fn single_insert_at_front() {
        assert_eq!(diff_plans(&plan(&["a", "b"]), &plan(&["z", "a", "b"])).kinds(), ["install-inserted(0)"]);
    }

    #[test]
    fn minimal_change_is_one_entry() {
        let a = plan(&["a"]);
        let mut b = a.clone();
        b.goals.minimal_verify.cmd = "make check".into();
        assert_eq!(diff_plans(&a, &b).kinds(), ["minimal-verify-changed"]);
    }

    #[test]
    fn replace_remove_move() {
        assert_eq!(diff_plans(&plan(&["a", "b", "c"]), &plan(&["a", "x", "c"])).kinds(), ["install-replaced(1)"]);
        assert_eq!(diff_plans(&plan(&["a", "b", "c"]), &plan(&["a", "c"])).kinds(), ["install-removed(1)"]);
        assert_eq!(diff_plans(&plan(&["a", "b", "c"]), &plan(&["b", "c", "a"])).kinds(), ["install-moved(0->2)"]);
    }

    #[test]
    fn strongest_transitions() {
        let a = plan(&[]);
        let mut b = a.clone();
        b.goals.strongest_verify = Some(CommandSpec::new("make check", "x", Phase::StrongestVerify));
        assert_eq!(diff_plans(&a, &b).kinds(), ["strongest-verify-added"]);
        assert_eq!(diff_plans(&b, &a).kinds(), ["strongest-verify-removed"]);
    }
}
