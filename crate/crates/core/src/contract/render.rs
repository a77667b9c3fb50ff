//! Stage scripts and the agent context document.

use crate::plan::{BootstrapPlan, CommandSpec};
use crate::shell::quote;
use crate::verifier::Stage;

pub const MARKER_PREFIX: &str = "### CMD ";

const PREAMBLE: &str = r#"set -eu
(set -o pipefail) 2>/dev/null && set -o pipefail
cd "${REPO_ROOT:-$(dirname "$0")/..}"
REPO_ROOT=$(pwd)
export REPO_ROOT
"#;

fn header(out: &mut String, what: &str) {
    out.push_str("#!/bin/sh\n");
    out.push_str(&format!("# {what} (generated by repoboot; edit commands.json, not this file)\n"));
    out.push_str(PREAMBLE);
}

fn end_marker(index: usize) -> String {
    format!("# ### END {index}")
}

fn push_blocks(out: &mut String, commands: &[CommandSpec], start: usize) {
    for (i, c) in commands.iter().enumerate() {
        let index = start + i;
        out.push_str(&format!("echo '{MARKER_PREFIX}{index}'\n"));
        out.push_str(&format!("cd \"$REPO_ROOT\"/{}\n", quote(&c.cwd)));
        out.push_str(&c.cmd);
        out.push('\n');
        out.push_str(&end_marker(index));
        out.push('\n');
    }
}

/// A fail-fast POSIX script running `commands` in order, each preceded by a
/// `### CMD <index>` marker on stdout.
pub fn render_stage_script(commands: &[CommandSpec], stage: Stage) -> String {
    render_stage_script_from(commands, stage, 0)
}

/// Like [`render_stage_script`], numbering markers from `start`. Used to run
/// only the tail of a stage while keeping contract-wide indices.
pub fn render_stage_script_from(commands: &[CommandSpec], stage: Stage, start: usize) -> String {
    let mut out = String::new();
    header(&mut out, &format!("{stage} stage"));
    push_blocks(&mut out, commands, start);
    out.push_str("# end of commands\n");
    out
}

/// `verify.sh [minimal|strongest|probes]`; minimal when no argument is given.
pub fn render_verify_script(plan: &BootstrapPlan) -> String {
    let mut out = String::new();
    header(&mut out, "verification stages");
    out.push_str("stage=\"${1:-minimal}\"\n");
    out.push_str("if [ \"$stage\" = minimal ]; then\n");
    push_blocks(&mut out, std::slice::from_ref(&plan.goals.minimal_verify), 0);
    out.push_str("elif [ \"$stage\" = strongest ]; then\n");
    match &plan.goals.strongest_verify {
        Some(s) => push_blocks(&mut out, std::slice::from_ref(s), 0),
        None => out.push_str(":\n"),
    }
    out.push_str("elif [ \"$stage\" = probes ]; then\n");
    if plan.goals.run_probes.is_empty() {
        out.push_str(":\n");
    }
    push_blocks(&mut out, &plan.goals.run_probes, 0);
    out.push_str("else\necho \"unknown stage: $stage\" >&2\nexit 64\nfi\n");
    out.push_str("# end of commands\n");
    out
}

/// Recovers `(marker index, command)` pairs from a rendered script, in file
/// order.
pub fn parse_script_commands(script: &str) -> Vec<(usize, String)> {
    let mut out = Vec::new();
    let mut lines = script.split('\n');
    while let Some(line) = lines.next() {
        let Some(index) = line
            .strip_prefix("echo '")
            .and_then(|l| l.strip_suffix('\''))
            .and_then(|l| l.strip_prefix(MARKER_PREFIX))
            .and_then(|n| n.parse::<usize>().ok())
        else {
            continue;
        };
        lines.next(); // cd line
        let end = end_marker(index);
        let mut body = Vec::new();
        for l in lines.by_ref() {
            if l == end {
                break;
            }
            body.push(l);
        }
        out.push((index, body.join("\n")));
    }
    out
}

const CONSTRAINTS_HEADING: &str = "## Constraints";
const USAGE_HEADING: &str = "## Usage";

pub fn render_agent_context(plan: &BootstrapPlan) -> String {
    let mut out = String::from("# Bootstrap contract\n\n");
    out.push_str(&plan.agent_context);
    out.push_str("\n\n");
    out.push_str(CONSTRAINTS_HEADING);
    out.push_str("\n\n");
    for note in &plan.constraints_notes {
        out.push_str("- ");
        out.push_str(&note.replace('\n', "\n  "));
        out.push('\n');
    }
    out.push('\n');
    out.push_str(USAGE_HEADING);
    out.push_str(
        "\n\n1. `sh .bootstrap/setup.sh` installs dependencies.\n\
         2. `sh .bootstrap/doctor.sh` checks the prepared environment.\n\
         3. `sh .bootstrap/verify.sh` runs the minimal verification; \
         `sh .bootstrap/verify.sh strongest` runs the strongest CI-derived check.\n\
         4. `.bootstrap/commands.json` lists every command with its reason and provenance; \
         `.bootstrap/failure_playbook.json` records past failures and fixes.\n",
    );
    out
}

/// Inverse of [`render_agent_context`]: `(agent_context, constraints_notes)`.
pub fn parse_agent_context(text: &str) -> Option<(String, Vec<String>)> {
    let body = text.strip_prefix("# Bootstrap contract\n\n")?;
    let (context, rest) = body.split_once(&format!("\n\n{CONSTRAINTS_HEADING}\n\n"))?;
    let (notes_block, _) = rest.split_once(&format!("\n{USAGE_HEADING}\n"))?;
    let mut notes: Vec<String> = Vec::new();
    for line in notes_block.lines() {
        if let Some(n) = line.strip_prefix("- ") {
            notes.push(n.to_string());
        } else if let (Some(cont), Some(last)) = (line.strip_prefix("  "), notes.last_mut()) {
            last.push('\n');
            last.push_str(cont);
        } else if line == "-" {
            notes.push(String::new());
        }
    }
    Some((context.to_string(), notes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::Phase;

    fn cmds(v: &[&str]) -> Vec<CommandSpec> {
        v.iter().map(|c| CommandSpec::new(*c, "x", Phase::Install)).collect()
    }

    #[test]
    fn empty_stage_is_preamble_only() {
        let s = render_stage_script(&[], Stage::Doctor);
        assert!(!s.contains(MARKER_PREFIX));
        assert!(s.starts_with("#!/bin/sh\n"));
    }

    #[test]
    fn commands_round_trip_through_markers() {
        let c = cmds(&["make", "cat <<'EOF' > x\nhello\nEOF", "echo 'a b'"]);
        let s = render_stage_script(&c, Stage::Setup);
        let back = parse_script_commands(&s);
        assert_eq!(back.len(), 3);
        for (i, (idx, cmd)) in back.iter().enumerate() {
            assert_eq!(*idx, i);
            assert_eq!(cmd, &c[i].cmd);
        }
        let tail = render_stage_script_from(&c[2..], Stage::Setup, 2);
        assert_eq!(parse_script_commands(&tail), [(2, "echo 'a b'".to_string())]);
    }

    #[test]
    fn verify_script_groups() {
        let mut plan = BootstrapPlan::new(CommandSpec::new("make test", "make test", Phase::MinimalVerify));
        plan.goals.run_probes = cmds(&["make lint", "make doc"]);
        let s = render_verify_script(&plan);
        let got: Vec<_> = parse_script_commands(&s).into_iter().map(|(_, c)| c).collect();
        assert_eq!(got, ["make test", "make lint", "make doc"]);
    }

    #[test]
    fn agent_context_round_trip() {
        let mut plan = BootstrapPlan::new(CommandSpec::new("make test", "make test", Phase::MinimalVerify));
        plan.agent_context = "C project built with make.\nSecond line.".into();
        plan.constraints_notes = vec!["keep sources".into(), "two\nlines".into(), String::new()];
        let text = render_agent_context(&plan);
        let (ctx, notes) = parse_agent_context(&text).unwrap();
        assert_eq!(ctx, plan.agent_context);
        assert_eq!(notes, plan.constraints_notes);
    }
}
