//! The end-to-end pipeline: discovery, planning, contract materialization,
//! warm repair, freeze and clean replay, all under explicit budgets.

mod batch;
mod budget;
mod pipeline;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use batch::{run_batch, BatchEntry, BatchSummary, Quantiles};
pub use budget::{charge_budget, BudgetCaps, BudgetEvent, BudgetLedger, BudgetName, BudgetSpent, Exhausted};
pub use pipeline::{bootstrap_pipeline, bootstrap_pipeline_shared};

use crate::backends::TokenTotals;
use crate::contract::FrozenContractRef;
use crate::evidence::ScanLimits;
use crate::verifier::{Outcome, VerifierConfig};

pub const RUN_REPORT_FILE: &str = "run_report.json";
pub const LEDGER_FILE: &str = "ledger.json";
pub const BATCH_SUMMARY_FILE: &str = "batch_summary.json";

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub verifier: VerifierConfig,
    pub budgets: BudgetCaps,
    /// Parent of the per-run directories (`<runs_dir>/<repo>/<timestamp>/`).
    pub runs_dir: PathBuf,
    pub scan_limits: ScanLimits,
    /// Copy the accepted `.bootstrap` next to a local source checkout.
    pub copy_back: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            verifier: VerifierConfig::default(),
            budgets: BudgetCaps::default(),
            runs_dir: PathBuf::from("runs"),
            scan_limits: ScanLimits::default(),
            copy_back: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunResult {
    Accepted,
    BudgetExhausted,
    BackendExhausted,
    PlannerFailed,
    ExecutorFailed,
}

impl RunResult {
    pub const ALL: [RunResult; 5] = [
        RunResult::Accepted,
        RunResult::BudgetExhausted,
        RunResult::BackendExhausted,
        RunResult::PlannerFailed,
        RunResult::ExecutorFailed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RunResult::Accepted => "accepted",
            RunResult::BudgetExhausted => "budget_exhausted",
            RunResult::BackendExhausted => "backend_exhausted",
            RunResult::PlannerFailed => "planner_failed",
            RunResult::ExecutorFailed => "executor_failed",
        }
    }
}

impl fmt::Display for RunResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RunResult {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RunResult::ALL.into_iter().find(|r| r.as_str() == s).ok_or_else(|| format!("unknown result `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub repository: String,
    pub result: RunResult,
    /// Why the run ended, in one line.
    pub detail: String,
    pub exhausted_budget: Option<BudgetName>,
    pub rounds_used: u64,
    pub clean_replays_used: u64,
    pub strongest_repairs_used: u64,
    pub wall_time_s: f64,
    pub tokens: TokenTotals,
    pub final_contract: Option<FrozenContractRef>,
    /// The clean replay that accepted `final_contract`.
    pub final_trace: Option<String>,
    pub trace_refs: Vec<String>,
    pub run_dir: String,
    /// Full setup-stage executions over every session of the run.
    pub setup_executions: usize,
    pub warm_reuse: bool,
    pub sanity_rejections: usize,
    pub strongest_outcome: Option<Outcome>,
}

impl RunReport {
    pub fn accepted(&self) -> bool {
        self.result == RunResult::Accepted
    }
}
