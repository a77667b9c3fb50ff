//! Staged contract execution: warm sessions with hot reload for repair
//! rounds, and clean replay from a fresh environment, which alone decides
//! validity.

mod container;
mod local;
mod process;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use container::{runtime_available, Container};
pub use local::LocalSandbox;
pub use process::{run_command, RawRun, TERMINATION_GRACE};

use crate::contract::{
    contract_hash, render_stage_script_from, BootstrapContract, DOCTOR_SCRIPT, SETUP_SCRIPT, VERIFY_SCRIPT,
};
use crate::evidence::RepoSnapshot;
use crate::plan::{BootstrapPlan, CommandSpec};

pub const DEFAULT_BASE_IMAGE: &str = "ubuntu:24.04";
pub const DEFAULT_MOUNT_PATH: &str = "/workspace/repo";
pub const DEFAULT_LOG_TAIL_BYTES: usize = 64 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Setup,
    Doctor,
    Minimal,
    Strongest,
    Probe,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Setup, Stage::Doctor, Stage::Minimal, Stage::Strongest, Stage::Probe];

    /// Stages whose failure skips everything after them.
    pub fn is_gated(self) -> bool {
        matches!(self, Stage::Setup | Stage::Doctor | Stage::Minimal)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Setup => "setup",
            Stage::Doctor => "doctor",
            Stage::Minimal => "minimal",
            Stage::Strongest => "strongest",
            Stage::Probe => "probe",
        }
    }

    /// Contract script and argument running this stage.
    pub fn script(self) -> (&'static str, Option<&'static str>) {
        match self {
            Stage::Setup => (SETUP_SCRIPT, None),
            Stage::Doctor => (DOCTOR_SCRIPT, None),
            Stage::Minimal => (VERIFY_SCRIPT, Some("minimal")),
            Stage::Strongest => (VERIFY_SCRIPT, Some("strongest")),
            Stage::Probe => (VERIFY_SCRIPT, Some("probes")),
        }
    }

    pub fn commands(self, plan: &BootstrapPlan) -> &[CommandSpec] {
        match self {
            Stage::Setup => &plan.install_commands,
            Stage::Doctor => &plan.doctor_commands,
            Stage::Minimal => std::slice::from_ref(&plan.goals.minimal_verify),
            Stage::Strongest => plan.goals.strongest_verify.as_slice(),
            Stage::Probe => &plan.goals.run_probes,
        }
    }

    pub fn phase(self) -> crate::plan::Phase {
        use crate::plan::Phase;
        match self {
            Stage::Setup => Phase::Install,
            Stage::Doctor => Phase::Doctor,
            Stage::Minimal => Phase::MinimalVerify,
            Stage::Strongest => Phase::StrongestVerify,
            Stage::Probe => Phase::RunProbes,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Pass,
    Fail,
    Timeout,
    Skipped,
}

/// How a stage result came about in a warm session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Full,
    /// Only commands beyond an already executed prefix ran.
    Incremental,
    /// Unchanged since it last passed in this environment; not rerun.
    Reused,
    NotRun,
}

impl Execution {
    pub fn ran(self) -> bool {
        matches!(self, Execution::Full | Execution::Incremental)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageResult {
    pub stage: Stage,
    pub outcome: Outcome,
    pub exit_code: Option<i32>,
    pub failed_command_index: Option<usize>,
    pub failed_command: Option<String>,
    pub stdout_tail: String,
    pub stderr_tail: String,
    pub duration_s: f64,
    pub execution: Execution,
    /// Command markers observed on stdout.
    pub commands_dispatched: usize,
}

impl StageResult {
    pub fn skipped(stage: Stage) -> Self {
        Self {
            stage,
            outcome: Outcome::Skipped,
            exit_code: None,
            failed_command_index: None,
            failed_command: None,
            stdout_tail: String::new(),
            stderr_tail: String::new(),
            duration_s: 0.0,
            execution: Execution::NotRun,
            commands_dispatched: 0,
        }
    }

    fn from_raw(stage: Stage, raw: RawRun, start: usize, execution: Execution) -> Self {
        let outcome = if raw.timed_out {
            Outcome::Timeout
        } else if raw.exit_code == Some(0) {
            Outcome::Pass
        } else {
            Outcome::Fail
        };
        let failed_command_index = (outcome != Outcome::Pass).then(|| raw.last_marker.unwrap_or(start));
        Self {
            stage,
            outcome,
            exit_code: if raw.timed_out { None } else { raw.exit_code },
            failed_command_index,
            failed_command: None,
            stdout_tail: raw.stdout_tail,
            stderr_tail: raw.stderr_tail,
            duration_s: raw.duration_s,
            execution,
            commands_dispatched: raw.markers_seen,
        }
    }

    pub fn passed(&self) -> bool {
        self.outcome == Outcome::Pass
    }

    /// Both output tails, stderr first.
    pub fn output(&self) -> String {
        format!("{}\n{}", self.stderr_tail, self.stdout_tail)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionMode {
    Warm,
    Clean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvironmentState {
    Fresh,
    Reused,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutorKind {
    Container,
    LocalSandbox,
}

impl std::str::FromStr for ExecutorKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "container" => Ok(ExecutorKind::Container),
            "local_sandbox" | "local-sandbox" | "local" => Ok(ExecutorKind::LocalSandbox),
            _ => Err(format!("unknown executor `{s}` (expected container or local_sandbox)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub id: String,
    pub mode: SessionMode,
    pub environment_state: EnvironmentState,
    pub executor: ExecutorKind,
    pub started_at: DateTime<Utc>,
    /// Full setup-stage executions in this environment so far.
    pub executed_setup_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub session: SessionInfo,
    pub stage_results: Vec<StageResult>,
    pub wall_time_s: f64,
    pub contract_hash: String,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl ExecutionTrace {
    pub fn stage(&self, stage: Stage) -> Option<&StageResult> {
        self.stage_results.iter().find(|r| r.stage == stage)
    }

    pub fn outcome(&self, stage: Stage) -> Outcome {
        self.stage(stage).map_or(Outcome::Skipped, |r| r.outcome)
    }

    /// First gated stage that did not pass.
    pub fn first_gated_failure(&self) -> Option<&StageResult> {
        self.stage_results.iter().find(|r| r.stage.is_gated() && r.outcome != Outcome::Pass)
    }

    /// Setup, doctor and minimal all passed, whatever the session mode.
    pub fn gates_passed(&self) -> bool {
        [Stage::Setup, Stage::Doctor, Stage::Minimal].iter().all(|s| self.outcome(*s) == Outcome::Pass)
    }

    pub fn commands_dispatched(&self) -> usize {
        self.stage_results.iter().map(|r| r.commands_dispatched).sum()
    }

    /// Whether setup ran in full during this trace.
    pub fn setup_ran_full(&self) -> bool {
        self.stage(Stage::Setup).is_some_and(|r| r.execution == Execution::Full)
    }

    pub fn is_clean(&self) -> bool {
        self.session.mode == SessionMode::Clean
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VerifierError {
    #[error("executor unavailable: {0}")]
    ExecutorUnavailable(String),
    #[error("base image unavailable: {0}")]
    ImageUnavailable(String),
    #[error("session is closed")]
    SessionClosed,
    #[error("validity is only defined for clean-replay traces")]
    WarmTraceRejected,
    #[error("clean environment differs from the snapshot before setup")]
    FreshnessViolation,
    #[error("contract unreadable: {0}")]
    Contract(String),
    #[error("invalid verifier configuration: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierConfig {
    pub executor: ExecutorKind,
    pub base_image: String,
    pub mount_path: String,
    pub stage_timeouts: BTreeMap<Stage, u64>,
    pub network_allowed: bool,
    pub log_tail_bytes: usize,
    /// Prepended to `PATH` inside the local sandbox.
    pub tool_dirs: Vec<PathBuf>,
    /// Full stage logs go here when set.
    pub log_dir: Option<PathBuf>,
    /// Container runtime CLI.
    pub runtime: String,
    /// Reuse warm environments across repair rounds.
    pub warm_reuse: bool,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        Self {
            executor: ExecutorKind::Container,
            base_image: DEFAULT_BASE_IMAGE.into(),
            mount_path: DEFAULT_MOUNT_PATH.into(),
            stage_timeouts: BTreeMap::from([
                (Stage::Setup, 3600),
                (Stage::Doctor, 120),
                (Stage::Minimal, 300),
                (Stage::Strongest, 1200),
            ]),
            network_allowed: true,
            log_tail_bytes: DEFAULT_LOG_TAIL_BYTES,
            tool_dirs: Vec::new(),
            log_dir: None,
            runtime: "docker".into(),
            warm_reuse: true,
        }
    }
}

impl VerifierConfig {
    pub fn local() -> Self {
        Self { executor: ExecutorKind::LocalSandbox, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), VerifierError> {
        if !self.mount_path.starts_with('/') {
            return Err(VerifierError::Config(format!("mount path `{}` is not absolute", self.mount_path)));
        }
        if let Some((s, _)) = self.stage_timeouts.iter().find(|(_, t)| **t == 0) {
            return Err(VerifierError::Config(format!("{s} timeout must be positive")));
        }
        if self.log_tail_bytes == 0 {
            return Err(VerifierError::Config("log tail must be positive".into()));
        }
        Ok(())
    }

    /// The stage cap, tightened to the sum of its commands' own timeouts.
    pub fn stage_timeout(&self, stage: Stage, commands: &[CommandSpec]) -> u64 {
        let sum: u64 = commands.iter().map(|c| c.timeout_s).sum();
        match self.stage_timeouts.get(&stage) {
            Some(cap) if sum > 0 => sum.min(*cap),
            Some(cap) => *cap,
            None => sum.max(1),
        }
    }
}

/// An isolated environment that runs stage scripts from the repository root.
pub trait Executor: Send {
    fn kind(&self) -> ExecutorKind;
    fn run_script(
        &mut self,
        stage: Stage,
        script: &str,
        args: &[&str],
        timeout_s: u64,
    ) -> Result<RawRun, VerifierError>;
    /// Digest of the repository file listing inside the environment.
    fn listing_hash(&mut self) -> Result<String, VerifierError>;
    fn close(&mut self);
}

pub(crate) fn listing_digest(lines: &[String]) -> String {
    let mut h = Sha256::new();
    for l in lines {
        h.update(l.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// Digest of a snapshot's file listing, comparable with
/// [`Executor::listing_hash`].
pub fn snapshot_listing_hash(snapshot: &RepoSnapshot) -> Result<String, VerifierError> {
    local::listing_lines(&snapshot.root).map(|l| listing_digest(&l)).map_err(|e| VerifierError::Io(e.to_string()))
}

/// What a warm environment remembers about the last verification.
#[derive(Debug, Clone)]
struct WarmState {
    plan: BootstrapPlan,
    results: Vec<StageResult>,
    /// Leading install commands known to have completed here.
    setup_prefix: usize,
}

impl WarmState {
    fn result(&self, stage: Stage) -> Option<&StageResult> {
        self.results.iter().find(|r| r.stage == stage)
    }
}

pub struct Session {
    info: SessionInfo,
    snapshot_root: PathBuf,
    executor: Box<dyn Executor>,
    config: VerifierConfig,
    warm: Option<WarmState>,
    open: bool,
}

impl fmt::Debug for Session {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Session").field("info", &self.info).field("open", &self.open).finish()
    }
}

static SESSION_SEQ: AtomicU64 = AtomicU64::new(0);

fn new_session_id(mode: SessionMode) -> String {
    let n = SESSION_SEQ.fetch_add(1, Ordering::Relaxed);
    let mode = match mode {
        SessionMode::Warm => "warm",
        SessionMode::Clean => "clean",
    };
    format!("{mode}-{}-{n}-{}", std::process::id(), Utc::now().format("%H%M%S%6f"))
}

/// Opens a fresh environment holding a copy of the snapshot.
pub fn open_session(
    snapshot: &RepoSnapshot,
    config: &VerifierConfig,
    mode: SessionMode,
) -> Result<Session, VerifierError> {
    config.validate()?;
    let id = new_session_id(mode);
    let executor: Box<dyn Executor> = match config.executor {
        ExecutorKind::LocalSandbox => Box::new(LocalSandbox::open(snapshot, config, &id)?),
        ExecutorKind::Container => Box::new(Container::open(snapshot, config, &id)?),
    };
    Ok(Session {
        info: SessionInfo {
            id,
            mode,
            environment_state: EnvironmentState::Fresh,
            executor: config.executor,
            started_at: Utc::now(),
            executed_setup_count: 0,
        },
        snapshot_root: snapshot.root.clone(),
        executor,
        config: config.clone(),
        warm: None,
        open: true,
    })
}

impl Session {
    pub fn info(&self) -> &SessionInfo {
        &self.info
    }

    pub fn is_open(&self) -> bool {
        self.open
    }

    pub fn close(&mut self) {
        if self.open {
            self.open = false;
            self.executor.close();
        }
    }

    pub fn listing_hash(&mut self) -> Result<String, VerifierError> {
        if !self.open {
            return Err(VerifierError::SessionClosed);
        }
        self.executor.listing_hash()
    }

    /// Runs one script. Marker indices in the script are reported as-is.
    pub fn run_stage(&mut self, stage: Stage, script: &str, timeout_s: u64) -> Result<StageResult, VerifierError> {
        self.run(stage, script, &[], timeout_s, 0, Execution::Full)
    }

    fn run(
        &mut self,
        stage: Stage,
        script: &str,
        args: &[&str],
        timeout_s: u64,
        start: usize,
        execution: Execution,
    ) -> Result<StageResult, VerifierError> {
        if !self.open {
            return Err(VerifierError::SessionClosed);
        }
        log::debug!("session {}: running {stage} (timeout {timeout_s}s)", self.info.id);
        let raw = self.executor.run_script(stage, script, args, timeout_s.max(1))?;
        Ok(StageResult::from_raw(stage, raw, start, execution))
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        self.close();
    }
}

fn reused(prev: &StageResult) -> StageResult {
    StageResult { execution: Execution::Reused, duration_s: 0.0, commands_dispatched: 0, ..prev.clone() }
}

fn common_prefix(a: &[CommandSpec], b: &[CommandSpec]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}

/// Runs the contract's stages in canonical order. In a warm session a stage
/// is rerun only if its commands changed, an earlier stage ran, or it did
/// not pass last time; setup runs incrementally when the new install list
/// extends the prefix already executed here.
pub fn verify_contract(
    session: &mut Session,
    contract: &BootstrapContract,
    include_strongest: bool,
    include_probes: bool,
) -> Result<ExecutionTrace, VerifierError> {
    if !session.open {
        return Err(VerifierError::SessionClosed);
    }
    let started = Instant::now();
    let hash = contract_hash(&contract.root).map_err(|e| VerifierError::Contract(e.to_string()))?;
    let plan = &contract.plan;
    let prev = match session.info.mode {
        SessionMode::Warm => session.warm.clone(),
        SessionMode::Clean => None,
    };
    let mut results: Vec<StageResult> = Vec::new();
    let mut blocked = false;
    let mut upstream_ran = false;
    let mut setup_prefix = prev.as_ref().map_or(0, |p| p.setup_prefix);

    for stage in Stage::ALL {
        let commands = stage.commands(plan);
        let included = match stage {
            Stage::Strongest => include_strongest && !commands.is_empty(),
            Stage::Probe => include_probes && !commands.is_empty(),
            _ => true,
        };
        if blocked || !included {
            results.push(StageResult::skipped(stage));
            continue;
        }
        let timeout = session.config.stage_timeout(stage, commands);
        let prev_result = prev.as_ref().and_then(|p| p.result(stage));
        let unchanged = prev.as_ref().is_some_and(|p| stage.commands(&p.plan) == commands);

        let mut result = if !upstream_ran && unchanged && prev_result.is_some_and(StageResult::passed) {
            reused(prev_result.expect("checked"))
        } else if let (Stage::Setup, Some(p)) = (stage, prev.as_ref()) {
            let k = p.setup_prefix.min(common_prefix(commands, &p.plan.install_commands));
            if k > 0 {
                let script = render_stage_script_from(&commands[k..], Stage::Setup, k);
                session.run(stage, &script, &[], timeout, k, Execution::Incremental)?
            } else {
                session.info.executed_setup_count += 1;
                run_contract_stage(session, contract, stage, timeout)?
            }
        } else {
            if stage == Stage::Setup {
                session.info.executed_setup_count += 1;
            }
            run_contract_stage(session, contract, stage, timeout)?
        };

        if result.execution.ran() {
            upstream_ran = true;
        }
        if let Some(i) = result.failed_command_index {
            result.failed_command = commands.get(i).map(|c| c.cmd.clone());
        }
        if stage == Stage::Setup && result.execution.ran() {
            setup_prefix = match result.outcome {
                Outcome::Pass => commands.len(),
                _ => result.failed_command_index.unwrap_or(0),
            };
        }
        if stage.is_gated() && !result.passed() {
            blocked = true;
        }
        results.push(result);
    }

    session.warm = Some(WarmState { plan: plan.clone(), results: results.clone(), setup_prefix });
    Ok(ExecutionTrace {
        session: session.info.clone(),
        stage_results: results,
        wall_time_s: started.elapsed().as_secs_f64(),
        contract_hash: hash,
        metadata: BTreeMap::new(),
    })
}

fn run_contract_stage(
    session: &mut Session,
    contract: &BootstrapContract,
    stage: Stage,
    timeout: u64,
) -> Result<StageResult, VerifierError> {
    let (file, arg) = stage.script();
    let script = contract.script(file).map_err(|e| VerifierError::Contract(format!("{file}: {e}")))?;
    let args: Vec<&str> = arg.into_iter().collect();
    session.run(stage, &script, &args, timeout, 0, Execution::Full)
}

/// Runs the contract from a fresh clean environment, strongest and probes
/// included. Probe outcomes are recorded but never gate validity.
pub fn clean_replay(
    snapshot: &RepoSnapshot,
    contract: &BootstrapContract,
    config: &VerifierConfig,
) -> Result<ExecutionTrace, VerifierError> {
    let mut session = open_session(snapshot, config, SessionMode::Clean)?;
    let expected = snapshot_listing_hash(snapshot)?;
    let found = session.listing_hash()?;
    if expected != found {
        session.close();
        return Err(VerifierError::FreshnessViolation);
    }
    let mut trace = verify_contract(&mut session, contract, true, true)?;
    session.close();
    trace.metadata.insert("pre_setup_listing_hash".into(), found);
    trace.metadata.insert("probes_gate_validity".into(), "false".into());
    trace.metadata.insert(
        "base_image".into(),
        match config.executor {
            ExecutorKind::Container => config.base_image.clone(),
            ExecutorKind::LocalSandbox => "local_sandbox".into(),
        },
    );
    Ok(trace)
}

/// Setup, doctor and minimal all passed in a clean replay.
pub fn validity(trace: &ExecutionTrace) -> Result<bool, VerifierError> {
    if !trace.is_clean() {
        return Err(VerifierError::WarmTraceRejected);
    }
    Ok(trace.gates_passed())
}

/// Hands out sessions and parks warm ones between repair rounds so their
/// environment can be reused.
pub struct Verifier {
    config: VerifierConfig,
    parked: Mutex<HashMap<PathBuf, Session>>,
}

impl Verifier {
    pub fn new(config: VerifierConfig) -> Self {
        Self { config, parked: Mutex::new(HashMap::new()) }
    }

    pub fn config(&self) -> &VerifierConfig {
        &self.config
    }

    /// A warm request returns the parked environment for this snapshot when
    /// reuse is enabled; everything else gets a fresh one.
    pub fn open_session(&self, snapshot: &RepoSnapshot, mode: SessionMode) -> Result<Session, VerifierError> {
        if mode == SessionMode::Warm && self.config.warm_reuse {
            if let Some(mut s) = self.parked.lock().expect("session pool").remove(&snapshot.root) {
                if s.is_open() {
                    s.info.environment_state = EnvironmentState::Reused;
                    return Ok(s);
                }
            }
        }
        open_session(snapshot, &self.config, mode)
    }

    /// Returns a session after use; warm ones are kept for reuse.
    pub fn release(&self, mut session: Session) {
        if session.info.mode == SessionMode::Warm && self.config.warm_reuse && session.is_open() {
            let key = session.snapshot_root.clone();
            self.parked.lock().expect("session pool").insert(key, session);
        } else {
            session.close();
        }
    }

    /// Drops any parked environment for the snapshot.
    pub fn discard(&self, snapshot: &RepoSnapshot) {
        if let Some(mut s) = self.parked.lock().expect("session pool").remove(&snapshot.root) {
            s.close();
        }
    }

    pub fn clean_replay(
        &self,
        snapshot: &RepoSnapshot,
        contract: &BootstrapContract,
    ) -> Result<ExecutionTrace, VerifierError> {
        clean_replay(snapshot, contract, &self.config)
    }
}
