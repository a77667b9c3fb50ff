//! Reusing an accepted contract versus rediscovering the setup from scratch.
//!
//! [`reuse_contract`] executes the manifest in a fresh environment without
//! any planning. [`cold_explore`] stands in for an agent that knows nothing
//! about the repository: it inspects files, probes toolchains and tries
//! candidate commands until something verifies.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contract::{render_stage_script, CommandsManifest, MANIFEST_FILE};
use crate::evidence::{scan_repository, RepoSnapshot, ScanLimits};
use crate::json::read_file;
use crate::plan::{CommandSpec, Phase};
use crate::verifier::{open_session, Outcome, Session, SessionMode, Stage, StageResult, VerifierConfig, VerifierError};

#[derive(Debug, Error)]
pub enum ReuseError {
    #[error("cannot load {MANIFEST_FILE} from {0}: {1}")]
    Load(String, std::io::Error),
    #[error(transparent)]
    Verifier(#[from] VerifierError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReuseStage {
    pub stage: Stage,
    pub outcome: Outcome,
    pub duration_s: f64,
    pub commands_listed: usize,
    pub commands_dispatched: usize,
    pub failed_command_index: Option<usize>,
    pub failed_command: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReuseReport {
    pub repository: String,
    pub passed: bool,
    pub stages: Vec<ReuseStage>,
    /// Commands listed in the manifest for the stages that were requested.
    pub manifest_commands: usize,
    pub commands_dispatched: usize,
    pub wall_time_s: f64,
}

/// Runs setup, doctor and minimal verify (plus strongest when asked) from a
/// contract's manifest in a fresh environment. A failing gated stage skips
/// the rest.
pub fn reuse_contract(
    contract_dir: &Path,
    snapshot: &RepoSnapshot,
    config: &VerifierConfig,
    include_strongest: bool,
) -> Result<ReuseReport, ReuseError> {
    let manifest: CommandsManifest = read_file(&contract_dir.join(MANIFEST_FILE))
        .map_err(|e| ReuseError::Load(contract_dir.display().to_string(), e))?;
    let started = Instant::now();
    let mut session = open_session(snapshot, config, SessionMode::Clean)?;

    let mut stages = vec![
        (Stage::Setup, manifest.install.clone()),
        (Stage::Doctor, manifest.doctor.clone()),
        (Stage::Minimal, vec![manifest.minimal_verify.clone()]),
    ];
    if include_strongest {
        stages.push((Stage::Strongest, manifest.strongest_verify.iter().cloned().collect()));
    }

    let mut out = Vec::new();
    let mut blocked = false;
    for (stage, commands) in &stages {
        let result = if blocked || commands.is_empty() {
            StageResult::skipped(*stage)
        } else {
            let script = render_stage_script(commands, *stage);
            session.run_stage(*stage, &script, config.stage_timeout(*stage, commands))?
        };
        if stage.is_gated() && !blocked && !commands.is_empty() && result.outcome != Outcome::Pass {
            blocked = true;
        }
        out.push(ReuseStage {
            stage: *stage,
            outcome: result.outcome,
            duration_s: result.duration_s,
            commands_listed: commands.len(),
            commands_dispatched: result.commands_dispatched,
            failed_command_index: result.failed_command_index,
            failed_command: result.failed_command.clone(),
        });
    }
    session.close();

    let passed = out
        .iter()
        .all(|s| matches!(s.outcome, Outcome::Pass) || (s.outcome == Outcome::Skipped && s.commands_listed == 0));
    Ok(ReuseReport {
        repository: snapshot.name(),
        passed,
        manifest_commands: stages.iter().map(|(_, c)| c.len()).sum(),
        commands_dispatched: out.iter().map(|s| s.commands_dispatched).sum(),
        stages: out,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColdAttempt {
    pub stage: Stage,
    pub cmd: String,
    pub cwd: String,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColdReport {
    pub repository: String,
    pub passed: bool,
    pub verify_command: Option<String>,
    pub attempts: Vec<ColdAttempt>,
    pub commands_run: usize,
    pub wall_time_s: f64,
}

const PROBED_TOOLS: [&str; 10] = ["python3", "pip", "node", "npm", "yarn", "cargo", "go", "make", "cmake", "poetry"];

/// Candidate install and verify commands an uninformed explorer would try.
fn candidates(manager: &str, snapshot: &RepoSnapshot, dir: &str) -> (Vec<&'static str>, Vec<&'static str>) {
    let has = |f: &str| snapshot.root.join(dir).join(f).is_file();
    match manager {
        "pip" => (
            if has("requirements.txt") {
                vec!["python3 -m pip install -r requirements.txt", "python3 -m pip install -e ."]
            } else {
                vec!["python3 -m pip install -e ."]
            },
            vec!["python3 -m pytest -q", "python3 -m unittest discover"],
        ),
        "poetry" => (vec!["poetry install"], vec!["poetry run pytest -q", "poetry run python -m pytest -q"]),
        "pipenv" => (vec!["pipenv install --dev"], vec!["pipenv run pytest -q"]),
        "uv" => (vec!["uv sync"], vec!["uv run pytest -q"]),
        "yarn" => (vec!["yarn install --frozen-lockfile", "yarn install"], vec!["yarn test"]),
        "pnpm" => (vec!["pnpm install --frozen-lockfile", "pnpm install"], vec!["pnpm test"]),
        "npm" => (vec!["npm ci", "npm install"], vec!["npm test"]),
        "cargo" => (vec!["cargo build"], vec!["cargo test"]),
        "go" => (vec!["go mod download"], vec!["go test ./..."]),
        "cmake" => {
            (vec!["cmake -S . -B build && cmake --build build"], vec!["ctest --test-dir build --output-on-failure"])
        }
        "make" => (vec!["make"], vec!["make test", "make check"]),
        _ => (vec![], vec![]),
    }
}

struct Explorer<'a> {
    session: Session,
    config: &'a VerifierConfig,
    attempts: Vec<ColdAttempt>,
    commands_run: usize,
}

impl Explorer<'_> {
    fn attempt(&mut self, stage: Stage, cmd: &str, cwd: &str) -> Result<bool, VerifierError> {
        let phase = match stage {
            Stage::Setup => Phase::Install,
            Stage::Minimal => Phase::MinimalVerify,
            _ => Phase::Doctor,
        };
        let spec = CommandSpec::new(cmd, "exploration", phase).with_cwd(cwd);
        let commands = std::slice::from_ref(&spec);
        let script = render_stage_script(commands, stage);
        let result = self.session.run_stage(stage, &script, self.config.stage_timeout(stage, commands))?;
        self.commands_run += result.commands_dispatched;
        self.attempts.push(ColdAttempt { stage, cmd: cmd.to_string(), cwd: cwd.to_string(), outcome: result.outcome });
        Ok(result.outcome == Outcome::Pass)
    }
}

/// Rediscovers a working install and verify sequence with no contract.
pub fn cold_explore(
    snapshot: &RepoSnapshot,
    config: &VerifierConfig,
    limits: &ScanLimits,
) -> Result<ColdReport, VerifierError> {
    let started = Instant::now();
    let discovery = scan_repository(snapshot, limits);
    let mut ex = Explorer {
        session: open_session(snapshot, config, SessionMode::Clean)?,
        config,
        attempts: Vec::new(),
        commands_run: 0,
    };

    ex.attempt(Stage::Doctor, "ls -la", ".")?;
    for item in discovery.important_files.iter().take(8) {
        ex.attempt(Stage::Doctor, &format!("cat {}", shlex::try_quote(&item.file_path).unwrap_or_default()), ".")?;
    }
    for tool in PROBED_TOOLS {
        ex.attempt(Stage::Doctor, &format!("command -v {tool}"), ".")?;
    }

    let mut verify_command = None;
    'managers: for manager in &discovery.package_managers {
        let dir = match Path::new(&manager.trigger_file).parent().map(|p| p.to_string_lossy().into_owned()) {
            Some(d) if !d.is_empty() => d,
            _ => ".".to_string(),
        };
        let (installs, verifies) = candidates(&manager.name, snapshot, &dir);
        for cmd in installs {
            if ex.attempt(Stage::Setup, cmd, &dir)? {
                break;
            }
        }
        for cmd in verifies {
            // A pass is only trusted once it reproduces.
            if ex.attempt(Stage::Minimal, cmd, &dir)? && ex.attempt(Stage::Minimal, cmd, &dir)? {
                verify_command = Some(cmd.to_string());
                break 'managers;
            }
        }
    }
    ex.session.close();

    Ok(ColdReport {
        repository: snapshot.name(),
        passed: verify_command.is_some(),
        verify_command,
        commands_run: ex.commands_run,
        attempts: ex.attempts,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verifier::ExecutorKind;

    fn local() -> VerifierConfig {
        VerifierConfig { executor: ExecutorKind::LocalSandbox, ..VerifierConfig::default() }
    }

    fn make_repo(makefile: &str) -> (tempfile::TempDir, RepoSnapshot) {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("Makefile"), makefile).unwrap();
        let snap = RepoSnapshot::in_place(dir.path()).unwrap();
        (dir, snap)
    }

    #[test]
    fn cold_explorer_finds_make_test() {
        let (_d, snap) = make_repo("all:\n\ttrue\ntest:\n\ttrue\n");
        let report = cold_explore(&snap, &local(), &ScanLimits::default()).unwrap();
        assert!(report.passed, "{report:?}");
        assert_eq!(report.verify_command.as_deref(), Some("make test"));
        assert!(report.commands_run > 10);
    }

    #[test]
    fn reuse_stops_after_failed_setup() {
        let (_d, snap) = make_repo("all:\n\ttrue\n");
        let contract = tempfile::tempdir().unwrap();
        let manifest = CommandsManifest {
            schema_version: 1,
            install: vec![CommandSpec::new("false", "x", Phase::Install)],
            doctor: vec![CommandSpec::new("true", "x", Phase::Doctor)],
            minimal_verify: CommandSpec::new("true", "x", Phase::MinimalVerify),
            strongest_verify: None,
            run_probes: vec![],
        };
        crate::json::write_file(&contract.path().join(MANIFEST_FILE), &manifest).unwrap();
        let report = reuse_contract(contract.path(), &snap, &local(), false).unwrap();
        assert!(!report.passed);
        let outcomes: Vec<Outcome> = report.stages.iter().map(|s| s.outcome).collect();
        assert_eq!(outcomes, [Outcome::Fail, Outcome::Skipped, Outcome::Skipped]);
        assert_eq!(report.manifest_commands, 3);
    }
}
