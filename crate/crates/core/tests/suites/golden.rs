//! Serialized formats must stay byte-for-byte stable. Set `REPOBOOT_BLESS=1`
//! to rewrite the golden files after an intentional format change.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::PathBuf;

use chrono::{TimeZone, Utc};

use repoboot_core::backends::TokenTotals;
use repoboot_core::contract::{materialize_contract, CommandsManifest, FrozenContractRef, CONTRACT_FILES};
use repoboot_core::json::to_stable_string;
use repoboot_core::orchestrator::{BudgetName, RunReport, RunResult};
use repoboot_core::plan::{BootstrapPlan, CommandSpec, Phase, Provenance, VerificationGoals};
use repoboot_core::verifier::{
    EnvironmentState, Execution, ExecutionTrace, ExecutorKind, Outcome, SessionInfo, SessionMode, Stage, StageResult,
};

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden").join(name)
}

fn check(name: &str, actual: &str) {
    let path = golden(name);
    if std::env::var_os("REPOBOOT_BLESS").is_some() {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, actual).unwrap();
    }
    let expected = fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert!(expected == actual, "{name} drifted from its golden file:\n{actual}");
}

fn plan() -> BootstrapPlan {
    let file = |f: &str| Provenance::File(f.into());
    BootstrapPlan {
        install_commands: vec![CommandSpec::new("make", "make builds the default target", Phase::Install)
            .with_provenance(file("Makefile"))],
        doctor_commands: vec![CommandSpec::new("command -v cc", "command -v checks that cc is on PATH", Phase::Doctor)],
        goals: VerificationGoals {
            minimal_verify: CommandSpec::new("make test", "make test runs the unit tests", Phase::MinimalVerify)
                .with_provenance(file("Makefile")),
            strongest_verify: Some(
                CommandSpec::new("make check", "CI step test/2: make check", Phase::StrongestVerify).with_provenance(
                    Provenance::Ci { workflow: ".github/workflows/ci.yml".into(), step: "test/2".into() },
                ),
            ),
            run_probes: vec![],
        },
        constraints_notes: vec!["Commands run from the repository root.".into()],
        evidence_links: BTreeMap::from([
            ("install/0".into(), vec!["Makefile".into()]),
            ("minimal_verify/0".into(), vec!["Makefile".into()]),
            ("strongest_verify/0".into(), vec![".github/workflows/ci.yml".into()]),
        ]),
        agent_context: "C project built with make.".into(),
    }
}

pub fn commands_json_is_stable() {
    check("commands.json", &to_stable_string(&CommandsManifest::from_plan(&plan())));
}

pub fn run_report_is_stable() {
    let at = Utc.with_ymd_and_hms(2025, 3, 1, 12, 0, 0).unwrap();
    let report = RunReport {
        repository: "make-c".into(),
        result: RunResult::Accepted,
        detail: "accepted after 1 repair round".into(),
        exhausted_budget: None::<BudgetName>,
        rounds_used: 1,
        clean_replays_used: 1,
        strongest_repairs_used: 0,
        wall_time_s: 2.5,
        tokens: TokenTotals { input: 1200, output: 300, total: 1500 },
        final_contract: Some(FrozenContractRef {
            path: "runs/make-c/20250301T120000.000Z/contracts/round_01/.bootstrap".into(),
            content_hash: "0".repeat(64),
            frozen_at: at,
        }),
        final_trace: Some("runs/make-c/20250301T120000.000Z/trace_003.json".into()),
        trace_refs: vec![
            "runs/make-c/20250301T120000.000Z/trace_001.json".into(),
            "runs/make-c/20250301T120000.000Z/trace_002.json".into(),
            "runs/make-c/20250301T120000.000Z/trace_003.json".into(),
        ],
        run_dir: "runs/make-c/20250301T120000.000Z".into(),
        setup_executions: 2,
        warm_reuse: true,
        sanity_rejections: 0,
        strongest_outcome: Some(Outcome::Pass),
    };
    check("run_report.json", &to_stable_string(&report));
}

pub fn trace_is_stable() {
    let stage = |stage: Stage, outcome: Outcome, dispatched: usize| StageResult {
        outcome,
        exit_code: match outcome {
            Outcome::Pass => Some(0),
            Outcome::Fail => Some(2),
            _ => None,
        },
        failed_command_index: (outcome == Outcome::Fail).then_some(0),
        failed_command: (outcome == Outcome::Fail).then(|| "make check".to_string()),
        stdout_tail: if dispatched > 0 { "### CMD 0\n".into() } else { String::new() },
        stderr_tail: if outcome == Outcome::Fail { "make: *** [check] Error 2\n".into() } else { String::new() },
        duration_s: 0.25 * dispatched as f64,
        execution: if dispatched > 0 { Execution::Full } else { Execution::NotRun },
        commands_dispatched: dispatched,
        ..StageResult::skipped(stage)
    };
    let trace = ExecutionTrace {
        session: SessionInfo {
            id: "clean-1".into(),
            mode: SessionMode::Clean,
            environment_state: EnvironmentState::Fresh,
            executor: ExecutorKind::LocalSandbox,
            started_at: Utc.with_ymd_and_hms(2025, 3, 1, 12, 0, 5).unwrap(),
            executed_setup_count: 1,
        },
        stage_results: vec![
            stage(Stage::Setup, Outcome::Pass, 1),
            stage(Stage::Doctor, Outcome::Pass, 1),
            stage(Stage::Minimal, Outcome::Pass, 1),
            stage(Stage::Strongest, Outcome::Fail, 1),
            stage(Stage::Probe, Outcome::Skipped, 0),
        ],
        wall_time_s: 1.0,
        contract_hash: "f".repeat(64),
        metadata: BTreeMap::from([("probes_gate_validity".into(), "false".into())]),
    };
    check("trace.json", &to_stable_string(&trace));
}

pub fn contract_has_exactly_the_eight_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join(".bootstrap");
    materialize_contract(&plan(), &[], &Default::default(), &out).unwrap();
    let found: BTreeSet<String> =
        fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    let expected: BTreeSet<String> = CONTRACT_FILES.iter().map(|s| s.to_string()).collect();
    assert_eq!(found, expected);
    assert_eq!(found.len(), 8);
}

pub fn suites() -> Vec<(&'static str, fn())> {
    vec![
        ("commands_json_is_stable", commands_json_is_stable as fn()),
        ("run_report_is_stable", run_report_is_stable),
        ("trace_is_stable", trace_is_stable),
        ("contract_has_exactly_the_eight_files", contract_has_exactly_the_eight_files),
    ]
}
