use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::Utc;

use super::budget::{BudgetEvent, BudgetLedger, BudgetName, Exhausted};
use super::{PipelineConfig, RunReport, RunResult, LEDGER_FILE, RUN_REPORT_FILE};
use crate::backends::{Backends, TokenLedger};
use crate::contract::{
    copy_contract, freeze_contract, materialize_contract, record_repair_knowledge, BootstrapContract, ContractError,
    FailurePlaybook, FrozenContract, FrozenContractRef, RepairOutcome, CONTRACT_DIR, PLAYBOOK_FILE,
};
use crate::evidence::{extract_ci_evidence, is_url, scan_repository, RepoSnapshot};
use crate::json::write_file;
use crate::plan::{
    detect_degenerate_verify, generate_plan, has_rejects, validate_plan, BootstrapPlan, CommandSpec, PlanContext,
    PlanError, SafetyWarning, Severity,
};
use crate::repair::{
    apply_edits, propose_repair, repair_target, sanity_check, FailureSignature, RepairDelta, RepairError,
};
use crate::verifier::{validity, verify_contract, ExecutionTrace, Outcome, SessionMode, Stage, Verifier};

/// How a run ended, before it is turned into a report.
enum End {
    Accepted(Box<FrozenContract>),
    Budget(BudgetName, String),
    Backend(String),
    Planner(String),
    Executor(String),
}

impl From<Exhausted> for End {
    fn from(e: Exhausted) -> Self {
        End::Budget(e.0, format!("{} reached", e.0))
    }
}

fn executor(e: impl std::fmt::Display) -> End {
    End::Executor(e.to_string())
}

fn contract_error(e: ContractError) -> End {
    match e {
        ContractError::PlanRejected(v) => {
            End::Planner(format!("plan rejected: {}", v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")))
        }
        other => End::Executor(other.to_string()),
    }
}

/// Validator warnings (risk screen included) recorded with each contract.
fn plan_warnings(plan: &BootstrapPlan) -> Vec<SafetyWarning> {
    validate_plan(plan, &PlanContext::default())
        .iter()
        .filter(|v| v.severity == Severity::Warn)
        .map(|v| SafetyWarning::from_violation(v, plan))
        .collect()
}

/// The baseline a repaired plan is checked against.
struct Baseline {
    plan: BootstrapPlan,
    evidence_map: BTreeMap<String, Vec<String>>,
    strongest: Option<CommandSpec>,
}

struct Run<'a> {
    source: &'a str,
    config: &'a PipelineConfig,
    backends: &'a Backends,
    started: Instant,
    ledger: BudgetLedger,
    tokens: TokenLedger,
    run_dir: PathBuf,
    trace_refs: Vec<String>,
    history: Vec<ExecutionTrace>,
    playbook: FailurePlaybook,
    setup_executions: usize,
    sanity_rejections: usize,
    shell_exhausted: bool,
    final_trace: Option<String>,
    strongest_outcome: Option<Outcome>,
    /// Last repair round number handed out (main and strongest loops).
    round: usize,
}

/// Runs the whole pipeline for one repository. Failures end up in the
/// report's `result`; everything is persisted under the run directory.
pub fn bootstrap_pipeline(source: &str, config: &PipelineConfig, backends: &Backends) -> RunReport {
    bootstrap_pipeline_shared(source, config, backends, None)
}

/// As [`bootstrap_pipeline`], also adding token usage to `shared`.
pub fn bootstrap_pipeline_shared(
    source: &str,
    config: &PipelineConfig,
    backends: &Backends,
    shared: Option<&TokenLedger>,
) -> RunReport {
    let run_dir = match create_run_dir(&config.runs_dir, source) {
        Ok(d) => d,
        Err(e) => {
            return RunReport {
                repository: source.to_string(),
                result: RunResult::ExecutorFailed,
                detail: format!("cannot create run directory under {}: {e}", config.runs_dir.display()),
                exhausted_budget: None,
                rounds_used: 0,
                clean_replays_used: 0,
                strongest_repairs_used: 0,
                wall_time_s: 0.0,
                tokens: Default::default(),
                final_contract: None,
                final_trace: None,
                trace_refs: vec![],
                run_dir: String::new(),
                setup_executions: 0,
                warm_reuse: config.verifier.warm_reuse,
                sanity_rejections: 0,
                strongest_outcome: None,
            }
        }
    };
    let mut run = Run {
        source,
        config,
        backends,
        started: Instant::now(),
        ledger: BudgetLedger::new(config.budgets),
        tokens: TokenLedger::default(),
        run_dir,
        trace_refs: Vec::new(),
        history: Vec::new(),
        playbook: FailurePlaybook::default(),
        setup_executions: 0,
        sanity_rejections: 0,
        shell_exhausted: false,
        final_trace: None,
        strongest_outcome: None,
        round: 0,
    };
    let end = run.drive().unwrap_or_else(|e| e);
    let report = run.finish(end);
    if let Some(s) = shared {
        s.absorb(report.tokens, run.tokens.responses());
    }
    report
}

fn create_run_dir(runs_dir: &Path, source: &str) -> std::io::Result<PathBuf> {
    let name = crate::evidence::repo_name(source);
    let parent = runs_dir.join(&name);
    fs::create_dir_all(&parent)?;
    let stamp = Utc::now().format("%Y%m%dT%H%M%S%.3fZ").to_string();
    let mut n = 0;
    loop {
        let dir = if n == 0 { parent.join(&stamp) } else { parent.join(format!("{stamp}-{n}")) };
        match fs::create_dir(&dir) {
            Ok(()) => return dir.canonicalize(),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => n += 1,
            Err(e) => return Err(e),
        }
    }
}

impl Run<'_> {
    fn charge(&mut self, event: BudgetEvent) -> Result<(), End> {
        self.ledger = self.ledger.charge(event)?;
        Ok(())
    }

    fn tick(&mut self) -> Result<(), End> {
        if self.shell_exhausted {
            return Err(End::Budget(BudgetName::MaxShellCommands, "max_shell_commands reached".into()));
        }
        self.charge(BudgetEvent::WallTick(self.started.elapsed().as_secs_f64()))
    }

    fn persist<T: serde::Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, End> {
        let path = self.run_dir.join(name);
        write_file(&path, value).map_err(|e| End::Executor(format!("{}: {e}", path.display())))?;
        Ok(path)
    }

    /// Persists a trace and charges the commands it dispatched. Running out
    /// of shell commands is noticed at the next tick so that a trace which
    /// already ran is never discarded.
    fn record(&mut self, trace: &ExecutionTrace) -> Result<String, End> {
        let path = self.persist(&format!("trace_{:03}.json", self.trace_refs.len() + 1), trace)?;
        let path = path.display().to_string();
        self.trace_refs.push(path.clone());
        if trace.setup_ran_full() {
            self.setup_executions += 1;
        }
        for _ in 0..trace.commands_dispatched() {
            match self.ledger.charge(BudgetEvent::ShellCommand) {
                Ok(l) => self.ledger = l,
                Err(_) => {
                    self.shell_exhausted = true;
                    break;
                }
            }
        }
        self.history.push(trace.clone());
        Ok(path)
    }

    fn materialize(&self, plan: &BootstrapPlan, dir_name: &str) -> Result<BootstrapContract, End> {
        let dir = self.run_dir.join("contracts").join(dir_name).join(CONTRACT_DIR);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(executor)?;
        }
        materialize_contract(plan, &plan_warnings(plan), &self.playbook, &dir).map_err(contract_error)
    }

    fn remember(&mut self, sig: &FailureSignature, delta: Option<&RepairDelta>, outcome: RepairOutcome, round: usize) {
        self.playbook = record_repair_knowledge(&self.playbook, sig, delta, outcome, round);
    }

    fn drive(&mut self) -> Result<End, End> {
        let snapshot = crate::evidence::snapshot_repository(self.source, &self.run_dir.join("snapshot"))
            .map_err(|e| End::Planner(format!("cannot acquire {}: {e}", self.source)))?;
        let discovery = scan_repository(&snapshot, &self.config.scan_limits);
        let ci = extract_ci_evidence(&snapshot);
        self.persist("discovery_report.json", &discovery)?;
        self.persist("ci_evidence_report.json", &ci)?;
        self.tick()?;

        let retries = self.config.budgets.max_llm_structured_retries as usize;
        let generated = generate_plan(&discovery, &ci, &*self.backends.planner, retries, &self.tokens);
        let generated = match generated {
            Ok(g) => {
                for _ in 0..g.attempts {
                    self.charge(BudgetEvent::PlanRetry)?;
                }
                g
            }
            Err(e) => {
                if let PlanError::StructuredOutputExhausted { attempts, .. } = &e {
                    for _ in 0..*attempts {
                        self.charge(BudgetEvent::PlanRetry)?;
                    }
                }
                return Err(End::Backend(e.to_string()));
            }
        };
        let plan = generated.plan;
        self.persist("plan.json", &plan)?;
        if detect_degenerate_verify(plan.minimal_verify(), true) {
            return Err(End::Planner(format!(
                "no substantive verification available (minimal_verify `{}`)",
                plan.minimal_verify().cmd
            )));
        }

        let verifier = Verifier::new(self.config.verifier.clone());
        let outcome = self.repair_and_accept(&verifier, &snapshot, plan);
        verifier.discard(&snapshot);
        let frozen = outcome?;

        copy_contract(&frozen.contract, &snapshot.root.join(CONTRACT_DIR)).map_err(executor)?;
        if self.config.copy_back && !is_url(self.source) {
            copy_contract(&frozen.contract, &Path::new(self.source).join(CONTRACT_DIR)).map_err(executor)?;
        }
        Ok(End::Accepted(Box::new(frozen)))
    }

    /// Warm repair loop plus acceptance gate. Returns the frozen contract
    /// whose clean replay passed.
    fn repair_and_accept(
        &mut self,
        verifier: &Verifier,
        snapshot: &RepoSnapshot,
        initial: BootstrapPlan,
    ) -> Result<FrozenContract, End> {
        let base = Baseline {
            evidence_map: initial.evidence_links.clone(),
            strongest: initial.goals.strongest_verify.clone(),
            plan: initial.clone(),
        };
        let mut plan = initial;
        let mut pending: Option<(FailureSignature, RepairDelta, usize)> = None;
        let mut failing: Option<ExecutionTrace> = None;
        let mut session = verifier.open_session(snapshot, SessionMode::Warm).map_err(executor)?;

        loop {
            self.tick()?;
            let dir_name = format!("round_{:02}", self.round);
            let trace = match failing.take() {
                Some(t) => t,
                None => {
                    let contract = self.materialize(&plan, &dir_name)?;
                    let t = verify_contract(&mut session, &contract, false, false).map_err(executor)?;
                    self.record(&t)?;
                    t
                }
            };
            if let Some((sig, delta, round)) = pending.take() {
                let still = repair_target(&trace).is_some_and(|s| s.summary() == sig.summary());
                let outcome = if delta.is_empty() || still { RepairOutcome::Abandoned } else { RepairOutcome::Fixed };
                self.remember(&sig, Some(&delta), outcome, round);
            }

            if trace.gates_passed() {
                // Re-materialize so the frozen contract carries the latest playbook.
                let contract = self.materialize(&plan, &dir_name)?;
                let frozen = freeze_contract(&contract).map_err(contract_error)?;
                self.charge(BudgetEvent::CleanReplayRound)?;
                let clean = verifier.clean_replay(snapshot, &contract).map_err(executor)?;
                let path = self.record(&clean)?;
                if validity(&clean).map_err(executor)? {
                    log::info!("{}: clean replay passed", snapshot.name());
                    self.final_trace = Some(path);
                    self.strongest_outcome = Some(clean.outcome(Stage::Strongest));
                    verifier.release(session);
                    return Ok(self.strongest_loop(verifier, snapshot, &base, frozen, clean));
                }
                log::info!("{}: clean replay failed; resuming repair from the clean trace", snapshot.name());
                if self.ledger.remaining(BudgetName::MaxCleanReplayRepairLoops) == 0 {
                    return Err(End::Budget(
                        BudgetName::MaxCleanReplayRepairLoops,
                        format!("clean replay failed {} times", self.ledger.spent.max_clean_replay_repair_loops),
                    ));
                }
                // The clean trace describes a fresh environment, so repair
                // continues in a fresh warm session too.
                drop(session);
                verifier.discard(snapshot);
                session = verifier.open_session(snapshot, SessionMode::Warm).map_err(executor)?;
                failing = Some(clean);
                continue;
            }

            self.charge(BudgetEvent::RepairRound)?;
            self.round += 1;
            let round = self.round;
            let (sig, delta, candidate) = self.propose(&plan, &trace, &base, round)?;
            self.persist(&format!("deltas/round_{round:02}.json"), &delta)?;
            log::info!("{}: round {round}: {} -> {}", snapshot.name(), sig.summary(), delta.summary());
            plan = candidate;
            pending = Some((sig, delta, round));
            verifier.release(session);
            session = verifier.open_session(snapshot, SessionMode::Warm).map_err(executor)?;
        }
    }

    /// One repair round: ask for deltas until one passes the sanity check
    /// and the validator, within the round's retry budget.
    fn propose(
        &mut self,
        plan: &BootstrapPlan,
        trace: &ExecutionTrace,
        base: &Baseline,
        round: usize,
    ) -> Result<(FailureSignature, RepairDelta, BootstrapPlan), End> {
        let Some(sig) = repair_target(trace) else {
            return Err(End::Backend("nothing to repair".into()));
        };
        let mut contract = BootstrapContract {
            root: PathBuf::new(),
            plan: plan.clone(),
            manifest: crate::contract::CommandsManifest::from_plan(plan),
            evidence_map: BTreeMap::new(),
            failure_playbook: self.playbook.clone(),
            safety_warnings: vec![],
            agent_context: String::new(),
        };
        contract.evidence_map = plan.evidence_links.clone();
        let mut feedback: Option<String> = None;
        loop {
            let remaining = self.ledger.remaining(BudgetName::MaxRepairLlmStructuredRetries) as usize;
            if remaining == 0 {
                self.remember(&sig, None, RepairOutcome::Abandoned, round);
                self.persist_playbook()?;
                return Err(End::Backend(format!(
                    "round {round}: no acceptable repair within {} attempts; last rejection: {}",
                    self.config.budgets.max_repair_llm_structured_retries,
                    feedback.unwrap_or_default()
                )));
            }
            let proposal = propose_repair(
                plan,
                &contract,
                trace,
                &*self.backends.repairer,
                remaining,
                &self.tokens,
                feedback.as_deref(),
            );
            let p = match proposal {
                Ok(p) => p,
                Err(e) => {
                    if let RepairError::StructuredOutputExhausted { attempts, .. } = &e {
                        for _ in 0..*attempts {
                            self.charge(BudgetEvent::RepairRetry)?;
                        }
                    }
                    self.remember(&sig, None, RepairOutcome::Abandoned, round);
                    self.persist_playbook()?;
                    return Err(End::Backend(format!("round {round}: {e}")));
                }
            };
            for _ in 0..p.attempts {
                self.charge(BudgetEvent::RepairRetry)?;
            }
            let candidate = match apply_edits(plan, &p.delta) {
                Ok(c) => c,
                Err(e) => {
                    log::warn!("round {round}: cannot apply `{}`: {e}", p.delta.summary());
                    feedback = Some(e.to_string());
                    continue;
                }
            };
            let verdict =
                sanity_check(&base.plan, &base.evidence_map, base.strongest.as_ref(), &candidate, &self.history);
            if !verdict.accepted {
                self.sanity_rejections += 1;
                let why: Vec<String> = verdict.violations.iter().map(|v| v.detail.clone()).collect();
                log::warn!("round {round}: sanity check rejected `{}`: {}", p.delta.summary(), why.join("; "));
                feedback = Some(format!("sanity check rejected the delta: {}", why.join("; ")));
                continue;
            }
            let violations = validate_plan(&candidate, &PlanContext::default());
            if has_rejects(&violations) {
                let why: Vec<String> =
                    violations.iter().filter(|v| v.severity == Severity::Reject).map(ToString::to_string).collect();
                log::warn!("round {round}: edited plan rejected: {}", why.join("; "));
                feedback = Some(format!("edited plan violates constraints: {}", why.join("; ")));
                continue;
            }
            return Ok((sig, p.delta, candidate));
        }
    }

    fn persist_playbook(&self) -> Result<(), End> {
        self.persist(PLAYBOOK_FILE, &self.playbook).map(|_| ())
    }

    /// Advisory follow-up: try to make a failing strongest_verify pass. A
    /// candidate replaces the accepted contract only after its own clean
    /// replay passes; nothing here can revoke acceptance.
    fn strongest_loop(
        &mut self,
        verifier: &Verifier,
        snapshot: &RepoSnapshot,
        base: &Baseline,
        accepted: FrozenContract,
        clean: ExecutionTrace,
    ) -> FrozenContract {
        let mut best = accepted;
        let mut trace = clean;
        let mut pending: Option<(FailureSignature, RepairDelta, usize)> = None;
        let mut plan = best.contract.plan.clone();
        loop {
            if let Some((sig, delta, round)) = pending.take() {
                let still = repair_target(&trace).is_some_and(|s| s.summary() == sig.summary());
                let outcome = if delta.is_empty() || still { RepairOutcome::Abandoned } else { RepairOutcome::Fixed };
                self.remember(&sig, Some(&delta), outcome, round);
            }
            if !matches!(trace.outcome(Stage::Strongest), Outcome::Fail | Outcome::Timeout) {
                return best;
            }
            if self.tick().is_err()
                || self.ledger.remaining(BudgetName::MaxCleanReplayRepairLoops) == 0
                || self.charge(BudgetEvent::StrongestRepair).is_err()
            {
                return best;
            }
            self.round += 1;
            let round = self.round;
            let Ok((sig, delta, candidate)) = self.propose(&plan, &trace, base, round) else {
                return best;
            };
            if delta.is_empty() {
                self.remember(&sig, Some(&delta), RepairOutcome::Abandoned, round);
                return best;
            }
            let _ = self.persist(&format!("deltas/strongest_{round:02}.json"), &delta);
            plan = candidate;
            pending = Some((sig, delta, round));

            let Ok(contract) = self.materialize(&plan, &format!("strongest_{round:02}")) else { return best };
            let Ok(mut session) = verifier.open_session(snapshot, SessionMode::Warm) else { return best };
            let warm = verify_contract(&mut session, &contract, true, false);
            verifier.release(session);
            let Ok(warm) = warm else { return best };
            if self.record(&warm).is_err() {
                return best;
            }
            if !(warm.gates_passed() && warm.outcome(Stage::Strongest) == Outcome::Pass) {
                trace = warm;
                continue;
            }
            if self.charge(BudgetEvent::CleanReplayRound).is_err() {
                return best;
            }
            let Ok(frozen) = freeze_contract(&contract) else { return best };
            let Ok(clean) = verifier.clean_replay(snapshot, &contract) else { return best };
            let Ok(path) = self.record(&clean) else { return best };
            if validity(&clean) != Ok(true) {
                return best;
            }
            self.final_trace = Some(path);
            self.strongest_outcome = Some(clean.outcome(Stage::Strongest));
            best = frozen;
            trace = clean;
        }
    }

    fn finish(&mut self, end: End) -> RunReport {
        let wall = self.started.elapsed().as_secs_f64();
        if let Ok(l) = self.ledger.charge(BudgetEvent::WallTick(wall)) {
            self.ledger = l;
        }
        let (result, detail, exhausted, final_contract) = match end {
            End::Accepted(f) => {
                let n = self.ledger.spent.max_repair_loops;
                let detail = format!("accepted after {n} repair round{}", if n == 1 { "" } else { "s" });
                (RunResult::Accepted, detail, None, Some(FrozenContractRef::from(f.as_ref())))
            }
            End::Budget(b, d) => (RunResult::BudgetExhausted, d, Some(b), None),
            End::Backend(d) => (RunResult::BackendExhausted, d, None, None),
            End::Planner(d) => (RunResult::PlannerFailed, d, None, None),
            End::Executor(d) => (RunResult::ExecutorFailed, d, None, None),
        };
        if result != RunResult::Accepted {
            self.final_trace = None;
        }
        let report = RunReport {
            repository: self.source.to_string(),
            result,
            detail,
            exhausted_budget: exhausted,
            rounds_used: self.ledger.spent.max_repair_loops,
            clean_replays_used: self.ledger.spent.max_clean_replay_repair_loops,
            strongest_repairs_used: self.ledger.spent.max_strongest_test_repairs,
            wall_time_s: wall,
            tokens: self.tokens.totals(),
            final_contract,
            final_trace: self.final_trace.clone(),
            trace_refs: self.trace_refs.clone(),
            run_dir: self.run_dir.display().to_string(),
            setup_executions: self.setup_executions,
            warm_reuse: self.config.verifier.warm_reuse,
            sanity_rejections: self.sanity_rejections,
            strongest_outcome: self.strongest_outcome,
        };
        let persisted = [
            write_file(&self.run_dir.join(LEDGER_FILE), &self.ledger),
            write_file(&self.run_dir.join(PLAYBOOK_FILE), &self.playbook),
            write_file(&self.run_dir.join(RUN_REPORT_FILE), &report),
        ];
        for e in persisted.into_iter().filter_map(Result::err) {
            log::error!("{}: cannot persist run files: {e}", self.run_dir.display());
        }
        report
    }
}
