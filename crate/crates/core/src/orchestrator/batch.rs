use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pipeline::bootstrap_pipeline_shared;
use super::{PipelineConfig, RunReport, RunResult, BATCH_SUMMARY_FILE};
use crate::backends::{Backends, TokenLedger, TokenTotals};
use crate::json::write_file;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub median: f64,
    pub p90: f64,
}

impl Quantiles {
    /// Nearest-rank quantiles; zero for an empty sample.
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let rank = |q: f64| v[((q * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1];
        Self { median: rank(0.5), p90: rank(0.9) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchEntry {
    pub repository: String,
    pub result: RunResult,
    pub detail: String,
    pub rounds_used: u64,
    pub wall_time_s: f64,
    pub tokens_total: u64,
    pub run_dir: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub total: usize,
    pub accepted: usize,
    pub success_rate: f64,
    /// Count per result kind (every kind listed, zeros included).
    pub results: BTreeMap<RunResult, usize>,
    pub wall_time_s: Quantiles,
    pub tokens_total: Quantiles,
    pub tokens: TokenTotals,
    pub runs: Vec<BatchEntry>,
}

impl BatchSummary {
    pub fn from_reports(reports: &[RunReport], tokens: TokenTotals) -> Self {
        let mut results: BTreeMap<RunResult, usize> = RunResult::ALL.iter().map(|r| (*r, 0)).collect();
        for r in reports {
            *results.entry(r.result).or_default() += 1;
        }
        let accepted = results[&RunResult::Accepted];
        let walls: Vec<f64> = reports.iter().map(|r| r.wall_time_s).collect();
        let toks: Vec<f64> = reports.iter().map(|r| r.tokens.total as f64).collect();
        Self {
            total: reports.len(),
            accepted,
            success_rate: if reports.is_empty() { 0.0 } else { accepted as f64 / reports.len() as f64 },
            results,
            wall_time_s: Quantiles::of(&walls),
            tokens_total: Quantiles::of(&toks),
            tokens,
            runs: reports
                .iter()
                .map(|r| BatchEntry {
                    repository: r.repository.clone(),
                    result: r.result,
                    detail: r.detail.clone(),
                    rounds_used: r.rounds_used,
                    wall_time_s: r.wall_time_s,
                    tokens_total: r.tokens.total,
                    run_dir: r.run_dir.clone(),
                })
                .collect(),
        }
    }

    pub fn executor_failures(&self) -> usize {
        self.results.get(&RunResult::ExecutorFailed).copied().unwrap_or(0)
    }
}

/// Runs one isolated pipeline per source on at most `jobs` threads and
/// writes `batch_summary.json` into the runs directory. Reports keep the
/// order of `sources`.
pub fn run_batch(
    sources: &[String],
    config: &PipelineConfig,
    backends: &Backends,
    jobs: usize,
) -> std::io::Result<(BatchSummary, Vec<RunReport>)> {
    let shared = TokenLedger::default();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build().map_err(std::io::Error::other)?;
    let reports: Vec<RunReport> = pool.install(|| {
        sources.par_iter().map(|s| bootstrap_pipeline_shared(s, config, backends, Some(&shared))).collect()
    });
    let summary = BatchSummary::from_reports(&reports, shared.totals());
    write_file(&config.runs_dir.join(BATCH_SUMMARY_FILE), &summary)?;
    Ok((summary, reports))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles() {
        let q = Quantiles::of(&[5.0, 1.0, 3.0, 2.0, 4.0]);
        assert_eq!(q, Quantiles { median: 3.0, p90: 5.0 });
        assert_eq!(Quantiles::of(&[]), Quantiles::default());
    }

    #[test]
    fn empty_batch_summary() {
        let s = BatchSummary::from_reports(&[], TokenTotals::default());
        assert_eq!(s.total, 0);
        assert_eq!(s.success_rate, 0.0);
        assert_eq!(s.results.len(), 5);
    }
}
