//! `repoboot`: bootstrap a repository into a verified `.bootstrap` contract,
//! replay or reuse an existing contract, and run batches.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0  | accepted / valid / passed |
//! | 1  | replay invalid, reuse failed |
//! | 2  | budget exhausted |
//! | 3  | backend exhausted |
//! | 4  | planner failed (including unreachable sources) |
//! | 5  | executor failed |
//! | 64 | bad configuration or usage |
//! | 66 | contract or report could not be loaded |

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use repoboot_core::backends::{Backends, LlmBackend, LlmConfig, ScriptedBackend};
use repoboot_core::contract::{load_contract, CONTRACT_DIR};
use repoboot_core::evidence::{is_url, snapshot_repository, RepoSnapshot, ScanLimits};
use repoboot_core::json::{read_file, to_stable_string};
use repoboot_core::orchestrator::{
    bootstrap_pipeline, run_batch, BatchSummary, BudgetCaps, BudgetName, PipelineConfig, RunReport, RunResult,
    RUN_REPORT_FILE,
};
use repoboot_core::reuse::{cold_explore, reuse_contract};
use repoboot_core::verifier::{clean_replay, validity, ExecutionTrace, ExecutorKind, VerifierConfig};

const EXIT_INVALID: u8 = 1;
const EXIT_CONFIG: u8 = 64;
const EXIT_LOAD: u8 = 66;

#[derive(Parser, Debug)]
#[command(name = "repoboot", version, about = "Bootstrap repositories into verified, replayable setup contracts")]
struct Cli {
    #[command(flatten)]
    opts: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalOpts {
    /// `rule`, `scripted:<dir>` or `llm`.
    #[arg(long, global = true, default_value = "rule")]
    backend: String,
    #[arg(long, global = true, value_enum, default_value_t = ExecutorArg::Container)]
    executor: ExecutorArg,
    #[arg(long, global = true)]
    base_image: Option<String>,
    /// Budget override as `<name>=<value>`; also accepted as `--budget.<name>=<value>`.
    #[arg(long = "budget", global = true, value_name = "NAME=N")]
    budgets: Vec<String>,
    #[arg(long, global = true, value_enum, default_value_t = OutputArg::Text)]
    output: OutputArg,
    /// Directory receiving full stage logs.
    #[arg(long, global = true)]
    logs: Option<PathBuf>,
    /// Extra directory prepended to PATH in the local sandbox (repeatable).
    #[arg(long = "tool-dir", global = true)]
    tool_dirs: Vec<PathBuf>,
    /// Start every repair round from a fresh environment.
    #[arg(long, global = true)]
    no_warm_reuse: bool,
    #[arg(long, global = true, default_value = "runs")]
    runs_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ExecutorArg {
    Container,
    #[value(name = "local_sandbox", alias = "local-sandbox")]
    LocalSandbox,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum OutputArg {
    Text,
    Json,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the full pipeline on a local directory or git URL.
    Bootstrap { source: String },
    /// Replay a contract in a clean environment and report validity.
    Replay {
        contract_dir: PathBuf,
        /// Repository the contract belongs to (default: the contract's parent).
        #[arg(long)]
        repo: Option<String>,
    },
    /// Execute a contract's manifest directly, as a downstream consumer would.
    Reuse {
        contract_dir: PathBuf,
        #[arg(long)]
        repo: Option<String>,
        /// Also run the strongest verification.
        #[arg(long)]
        strongest: bool,
        /// Time a cold exploration of the same repository for comparison.
        #[arg(long)]
        compare_cold: bool,
    },
    /// Bootstrap every source listed in a file, one per line.
    Batch {
        list_file: PathBuf,
        #[arg(long, default_value_t = default_jobs())]
        jobs: usize,
    },
    /// Print a stored run report or batch summary.
    Report { path: PathBuf },
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Rewrites `--budget.<name>=N` and `--budget.<name> N` into `--budget <name>=N`.
fn normalize_args(args: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut out = Vec::new();
    let mut it = args.into_iter().peekable();
    while let Some(arg) = it.next() {
        match arg.strip_prefix("--budget.") {
            Some(rest) if rest.contains('=') => {
                out.push("--budget".into());
                out.push(rest.to_string());
            }
            Some(rest) => {
                out.push("--budget".into());
                let value = it.next().unwrap_or_default();
                out.push(format!("{rest}={value}"));
            }
            None => out.push(arg),
        }
    }
    out
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Self { code: EXIT_CONFIG, error: e.into() }
    }
}

fn fail(code: u8, error: anyhow::Error) -> Failure {
    Failure { code, error }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse_from(normalize_args(std::env::args())) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { 0 });
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("repoboot: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

pub fn result_exit_code(result: RunResult) -> u8 {
    match result {
        RunResult::Accepted => 0,
        RunResult::BudgetExhausted => 2,
        RunResult::BackendExhausted => 3,
        RunResult::PlannerFailed => 4,
        RunResult::ExecutorFailed => 5,
    }
}

fn run(cli: Cli) -> Result<u8, Failure> {
    let config = pipeline_config(&cli.opts)?;
    let out = cli.opts.output;
    match cli.command {
        Command::Bootstrap { source } => {
            let backends = backends(&cli.opts.backend)?;
            let report = bootstrap_pipeline(&source, &config, &backends);
            emit(out, &report, || report_text(&report));
            Ok(result_exit_code(report.result))
        }
        Command::Replay { contract_dir, repo } => {
            let contract = load_contract(&contract_dir).map_err(|e| fail(EXIT_LOAD, e.into()))?;
            let (_tmp, snapshot) = repo_snapshot(&contract_dir, repo.as_deref())?;
            let trace = clean_replay(&snapshot, &contract, &config.verifier).map_err(|e| fail(5, e.into()))?;
            let valid = validity(&trace).map_err(|e| fail(5, e.into()))?;
            #[derive(Serialize)]
            struct Replay<'a> {
                valid: bool,
                trace: &'a ExecutionTrace,
            }
            emit(out, &Replay { valid, trace: &trace }, || trace_text(valid, &trace));
            Ok(if valid { 0 } else { EXIT_INVALID })
        }
        Command::Reuse { contract_dir, repo, strongest, compare_cold } => {
            let (_tmp, snapshot) = repo_snapshot(&contract_dir, repo.as_deref())?;
            let reuse = reuse_contract(&contract_dir, &snapshot, &config.verifier, strongest).map_err(|e| match e {
                repoboot_core::reuse::ReuseError::Load(..) => fail(EXIT_LOAD, e.into()),
                other => fail(5, other.into()),
            })?;
            let cold = if compare_cold {
                Some(cold_explore(&snapshot, &config.verifier, &config.scan_limits).map_err(|e| fail(5, e.into()))?)
            } else {
                None
            };
            let ratio = cold.as_ref().filter(|c| c.wall_time_s > 0.0).map(|c| reuse.wall_time_s / c.wall_time_s);
            #[derive(Serialize)]
            struct Reuse<'a> {
                reuse: &'a repoboot_core::reuse::ReuseReport,
                cold: Option<&'a repoboot_core::reuse::ColdReport>,
                reuse_to_cold_ratio: Option<f64>,
            }
            emit(out, &Reuse { reuse: &reuse, cold: cold.as_ref(), reuse_to_cold_ratio: ratio }, || {
                let mut s = String::new();
                for st in &reuse.stages {
                    s += &format!(
                        "{:<9} {:<7} {:>8.3}s  {}/{} commands",
                        st.stage.as_str(),
                        format!("{:?}", st.outcome).to_lowercase(),
                        st.duration_s,
                        st.commands_dispatched,
                        st.commands_listed
                    );
                    if let (Some(i), Some(c)) = (st.failed_command_index, &st.failed_command) {
                        s += &format!("  failed at #{i}: {c}");
                    }
                    s.push('\n');
                }
                s += &format!(
                    "reuse: {} in {:.3}s, {} of {} manifest commands run\n",
                    if reuse.passed { "passed" } else { "failed" },
                    reuse.wall_time_s,
                    reuse.commands_dispatched,
                    reuse.manifest_commands
                );
                if let Some(c) = &cold {
                    s += &format!("cold exploration: {:.3}s, {} commands run\n", c.wall_time_s, c.commands_run);
                }
                if let Some(r) = ratio {
                    s += &format!("reuse/cold ratio: {r:.3}\n");
                }
                s
            });
            Ok(if reuse.passed { 0 } else { EXIT_INVALID })
        }
        Command::Batch { list_file, jobs } => {
            let text = std::fs::read_to_string(&list_file)
                .with_context(|| format!("cannot read {}", list_file.display()))
                .map_err(|e| fail(EXIT_LOAD, e))?;
            let sources = parse_list(&text, list_file.parent().unwrap_or(Path::new(".")));
            let backends = backends(&cli.opts.backend)?;
            let (summary, _) = run_batch(&sources, &config, &backends, jobs).map_err(|e| fail(5, e.into()))?;
            emit(out, &summary, || summary_text(&summary));
            Ok(if summary.executor_failures() > 0 { 5 } else { 0 })
        }
        Command::Report { path } => {
            let path = if path.is_dir() { path.join(RUN_REPORT_FILE) } else { path };
            let value: serde_json::Value = read_file(&path).map_err(|e| fail(EXIT_LOAD, e.into()))?;
            if value.get("runs").is_some() {
                let summary: BatchSummary = serde_json::from_value(value).map_err(|e| fail(EXIT_LOAD, e.into()))?;
                emit(out, &summary, || summary_text(&summary));
                Ok(0)
            } else {
                let report: RunReport = serde_json::from_value(value).map_err(|e| fail(EXIT_LOAD, e.into()))?;
                emit(out, &report, || report_text(&report));
                Ok(result_exit_code(report.result))
            }
        }
    }
}

fn pipeline_config(opts: &GlobalOpts) -> Result<PipelineConfig> {
    let mut budgets = BudgetCaps::default();
    for spec in &opts.budgets {
        let (name, value) = spec.split_once('=').ok_or_else(|| anyhow!("budget override `{spec}` is not NAME=N"))?;
        let name: BudgetName = name.parse().map_err(|e: String| anyhow!(e))?;
        let value: u64 = value.parse().with_context(|| format!("budget {name}: `{value}` is not a number"))?;
        budgets.set(name, value).map_err(|e| anyhow!(e))?;
    }
    let mut verifier = VerifierConfig {
        executor: match opts.executor {
            ExecutorArg::Container => ExecutorKind::Container,
            ExecutorArg::LocalSandbox => ExecutorKind::LocalSandbox,
        },
        tool_dirs: opts.tool_dirs.iter().map(|d| absolute(d)).collect(),
        log_dir: opts.logs.as_deref().map(absolute),
        warm_reuse: !opts.no_warm_reuse,
        ..VerifierConfig::default()
    };
    if let Some(image) = &opts.base_image {
        verifier.base_image = image.clone();
    }
    verifier.validate()?;
    Ok(PipelineConfig {
        verifier,
        budgets,
        runs_dir: opts.runs_dir.clone(),
        scan_limits: ScanLimits::default(),
        copy_back: true,
    })
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

fn backends(spec: &str) -> Result<Backends> {
    match spec {
        "rule" => Ok(Backends::rule()),
        "llm" => {
            let config = LlmConfig::from_env().map_err(|e| anyhow!(e))?;
            Ok(Backends::single(Arc::new(LlmBackend::new(config)?)))
        }
        other => match other.strip_prefix("scripted:") {
            Some(dir) => Ok(Backends::single(Arc::new(ScriptedBackend::new(dir)?))),
            None => bail!("unknown backend `{other}` (expected rule, scripted:<dir> or llm)"),
        },
    }
}

/// The repository a contract is replayed against. Local directories are
/// used in place (sessions copy them); URLs are cloned into a temp dir.
fn repo_snapshot(
    contract_dir: &Path,
    repo: Option<&str>,
) -> Result<(Option<tempfile::TempDir>, RepoSnapshot), Failure> {
    let source = match repo {
        Some(r) => r.to_string(),
        None => {
            let dir = absolute(contract_dir);
            if dir.file_name().is_some_and(|n| n == CONTRACT_DIR) {
                dir.parent().unwrap_or(Path::new(".")).display().to_string()
            } else {
                return Err(anyhow!("--repo is required when the contract is not a `{CONTRACT_DIR}` directory").into());
            }
        }
    };
    if is_url(&source) {
        let tmp = tempfile::tempdir().map_err(|e| fail(4, e.into()))?;
        let snap = snapshot_repository(&source, tmp.path()).map_err(|e| fail(4, e.into()))?;
        Ok((Some(tmp), snap))
    } else {
        let snap = RepoSnapshot::in_place(&source).map_err(|e| fail(4, e.into()))?;
        Ok((None, snap))
    }
}

fn parse_list(text: &str, base: &Path) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            if is_url(l) || Path::new(l).is_absolute() || Path::new(l).exists() {
                l.to_string()
            } else {
                base.join(l).display().to_string()
            }
        })
        .collect()
}

fn emit<T: Serialize>(format: OutputArg, value: &T, text: impl FnOnce() -> String) {
    match format {
        OutputArg::Json => print!("{}", to_stable_string(value)),
        OutputArg::Text => print!("{}", text()),
    }
}

fn report_text(r: &RunReport) -> String {
    let mut s = format!("{}: {} ({})\n", r.repository, r.result, r.detail);
    if let Some(b) = r.exhausted_budget {
        s += &format!("exhausted budget: {b}\n");
    }
    s += &format!(
        "rounds: {}  clean replays: {}  strongest repairs: {}  setup executions: {}  sanity rejections: {}\n",
        r.rounds_used, r.clean_replays_used, r.strongest_repairs_used, r.setup_executions, r.sanity_rejections
    );
    s += &format!("wall time: {:.2}s  tokens: {}\n", r.wall_time_s, r.tokens.total);
    if let Some(c) = &r.final_contract {
        s += &format!("contract: {} ({})\n", c.path, c.content_hash);
    }
    if let Some(o) = r.strongest_outcome {
        s += &format!("strongest verification: {}\n", format!("{o:?}").to_lowercase());
    }
    s += &format!("run directory: {}\n", r.run_dir);
    s
}

fn trace_text(valid: bool, t: &ExecutionTrace) -> String {
    let mut s = String::new();
    for r in &t.stage_results {
        s += &format!("{:<9} {}", r.stage.as_str(), format!("{:?}", r.outcome).to_lowercase());
        if let Some(code) = r.exit_code {
            s += &format!(" (exit {code})");
        }
        if let (Some(i), Some(c)) = (r.failed_command_index, &r.failed_command) {
            s += &format!("  failed at #{i}: {c}");
        }
        s.push('\n');
    }
    s += if valid { "valid\n" } else { "invalid\n" };
    s
}

fn summary_text(b: &BatchSummary) -> String {
    let mut s = String::new();
    for run in &b.runs {
        s += &format!("{:<24} {:<18} {}\n", run.repository, run.result.as_str(), run.detail);
    }
    s += &format!(
        "success: {}/{} ({:.1}%)  wall time median {:.2}s p90 {:.2}s  tokens median {} p90 {}\n",
        b.accepted,
        b.total,
        b.success_rate * 100.0,
        b.wall_time_s.median,
        b.wall_time_s.p90,
        b.tokens_total.median,
        b.tokens_total.p90
    );
    s
}
