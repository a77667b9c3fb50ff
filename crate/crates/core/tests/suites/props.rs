//! Generated-input properties of plans, contracts, deltas, traces and
//! discovery. Every suite runs 256 cases.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use chrono::{TimeZone, Utc};
use proptest::prelude::*;
use proptest::test_runner::TestRunner;

use repoboot_core::contract::{load_contract, materialize_contract, render_stage_script, CommandsManifest};
use repoboot_core::evidence::{scan_repository, RepoSnapshot, ScanLimits};
use repoboot_core::json::to_stable_string;
use repoboot_core::plan::{BootstrapPlan, CommandDoc, CommandSpec, Phase, Provenance, VerificationGoals};
use repoboot_core::repair::{apply_edits, Edit, RepairDelta};
use repoboot_core::verifier::{
    open_session, validity, EnvironmentState, Execution, ExecutionTrace, ExecutorKind, Outcome, SessionInfo,
    SessionMode, Stage, StageResult, VerifierConfig, VerifierError,
};

const CASES: u32 = 256;

fn config() -> ProptestConfig {
    ProptestConfig { cases: CASES, failure_persistence: None, ..ProptestConfig::default() }
}

const INSTALLS: &[&str] = &[
    "make",
    "npm ci",
    "cargo build",
    "python3 -m pip install -r requirements.txt",
    "go mod download",
    "cmake -S . -B build",
    "poetry install",
    "yarn install --frozen-lockfile",
];
const DOCTORS: &[&str] = &["command -v make", "python3 --version", "node --version", "cargo --version", "git status"];
const VERIFIES: &[&str] = &[
    "make test",
    "cargo test",
    "python3 -m pytest -q",
    "go test ./...",
    "npm test",
    "ctest --test-dir build --output-on-failure",
];
const CWDS: &[&str] = &[".", "sub", "packages/core"];

fn provenance() -> impl Strategy<Value = Provenance> {
    prop_oneof![
        Just(Provenance::BackendInferred),
        prop::sample::select(vec!["Makefile", "package.json", "pyproject.toml", "Cargo.toml"])
            .prop_map(|f| Provenance::File(f.to_string())),
        (1..4usize, 0..5usize).prop_map(|(w, s)| Provenance::Ci {
            workflow: format!(".github/workflows/ci{w}.yml"),
            step: format!("test/{s}"),
        }),
    ]
}

fn command(pool: &'static [&'static str]) -> impl Strategy<Value = CommandSpec> {
    (prop::sample::select(pool), prop::sample::select(CWDS), 1..5000u64, provenance()).prop_map(
        |(cmd, cwd, timeout_s, provenance)| CommandSpec {
            cmd: cmd.to_string(),
            cwd: cwd.to_string(),
            timeout_s,
            reason: format!("run {cmd} for the project"),
            provenance,
        },
    )
}

fn ci_command(pool: &'static [&'static str]) -> impl Strategy<Value = CommandSpec> {
    command(pool).prop_map(|c| CommandSpec {
        provenance: Provenance::Ci { workflow: ".github/workflows/ci.yml".into(), step: "test/0".into() },
        ..c
    })
}

fn plan() -> impl Strategy<Value = BootstrapPlan> {
    (
        prop::collection::vec(command(INSTALLS), 0..6),
        prop::collection::vec(command(DOCTORS), 0..4),
        command(VERIFIES),
        prop::option::of(ci_command(VERIFIES)),
        prop::collection::vec(command(VERIFIES), 0..3),
        prop::collection::vec("[a-z]{3,10}( [a-z]{2,8}){0,5}", 0..4),
        "[A-Za-z][A-Za-z ,]{0,60}[a-z]",
    )
        .prop_map(|(install, doctor, minimal, strongest, probes, notes, context)| {
            let mut links = BTreeMap::new();
            for (i, c) in install.iter().enumerate() {
                if let Provenance::File(f) = &c.provenance {
                    links.insert(format!("install/{i}"), vec![f.clone()]);
                }
            }
            if let Provenance::File(f) = &minimal.provenance {
                links.insert("minimal_verify/0".into(), vec![f.clone()]);
            }
            BootstrapPlan {
                install_commands: install,
                doctor_commands: doctor,
                goals: VerificationGoals { minimal_verify: minimal, strongest_verify: strongest, run_probes: probes },
                constraints_notes: notes,
                evidence_links: links,
                agent_context: context,
            }
        })
}

proptest! {
    #![proptest_config(config())]

        fn plan_contract_round_trip(plan in plan()) {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join(".bootstrap");
        materialize_contract(&plan, &[], &Default::default(), &out).unwrap();
        let loaded = load_contract(&out).unwrap();
        prop_assert_eq!(&loaded.plan, &plan);
        prop_assert_eq!(loaded.manifest, CommandsManifest::from_plan(&plan));
    }

        fn replace_touches_only_its_target(plan in plan(), pick in any::<prop::sample::Index>(), new in command(INSTALLS)) {
        prop_assume!(!plan.install_commands.is_empty());
        let i = pick.index(plan.install_commands.len());
        let delta = RepairDelta::new(
            vec![Edit::ReplaceCommands { stage: Phase::Install, index: i, command: CommandDoc::from(&new) }],
            "swap",
        );
        let edited = apply_edits(&plan, &delta).unwrap();
        prop_assert_eq!(&edited.install_commands[i], &new);
        for (j, (a, b)) in plan.install_commands.iter().zip(&edited.install_commands).enumerate() {
            if j != i {
                prop_assert_eq!(a, b);
            }
        }
        prop_assert_eq!(edited.install_commands.len(), plan.install_commands.len());
        prop_assert_eq!(&edited.doctor_commands, &plan.doctor_commands);
        prop_assert_eq!(&edited.goals, &plan.goals);
        prop_assert_eq!(&edited.constraints_notes, &plan.constraints_notes);
        prop_assert_eq!(&edited.agent_context, &plan.agent_context);
    }

        fn move_then_move_back_is_identity(plan in plan(), a in any::<prop::sample::Index>(), b in any::<prop::sample::Index>()) {
        prop_assume!(!plan.install_commands.is_empty());
        let n = plan.install_commands.len();
        let (from, to) = (a.index(n), b.index(n));
        let there = apply_edits(&plan, &RepairDelta::new(vec![Edit::MoveCommands { stage: Phase::Install, from, to }], "m")).unwrap();
        let back = apply_edits(&there, &RepairDelta::new(vec![Edit::MoveCommands { stage: Phase::Install, from: to, to: from }], "m")).unwrap();
        prop_assert_eq!(back, plan);
    }
}

fn fail_fast_runs_exactly_k_plus_one_commands() {
    let repo = tempfile::tempdir().unwrap();
    fs::write(repo.path().join("README"), "x\n").unwrap();
    let snapshot = RepoSnapshot::in_place(repo.path()).unwrap();
    let session =
        std::cell::RefCell::new(open_session(&snapshot, &VerifierConfig::local(), SessionMode::Clean).unwrap());

    let strategy = (1..8usize).prop_flat_map(|n| (Just(n), 0..n, 1..120i32));
    let mut runner = TestRunner::new(config());
    runner
        .run(&strategy, |(n, k, code)| {
            let commands: Vec<CommandSpec> = (0..n)
                .map(|i| {
                    let cmd = if i == k { format!("sh -c 'exit {code}'") } else { format!("echo step{i}") };
                    CommandSpec::new(cmd, "step", Phase::Install)
                })
                .collect();
            let result = session
                .borrow_mut()
                .run_stage(Stage::Setup, &render_stage_script(&commands, Stage::Setup), 30)
                .unwrap();
            prop_assert_eq!(result.outcome, Outcome::Fail);
            prop_assert_eq!(result.exit_code, Some(code));
            prop_assert_eq!(result.commands_dispatched, k + 1);
            prop_assert_eq!(result.failed_command_index, Some(k));
            Ok(())
        })
        .unwrap();
    session.borrow_mut().close();
}

fn outcome() -> impl Strategy<Value = Outcome> {
    prop_oneof![Just(Outcome::Pass), Just(Outcome::Fail), Just(Outcome::Timeout), Just(Outcome::Skipped)]
}

fn trace() -> impl Strategy<Value = ExecutionTrace> {
    (prop_oneof![Just(SessionMode::Warm), Just(SessionMode::Clean)], prop::collection::vec(outcome(), 5)).prop_map(
        |(mode, outcomes)| ExecutionTrace {
            session: SessionInfo {
                id: "s".into(),
                mode,
                environment_state: EnvironmentState::Fresh,
                executor: ExecutorKind::LocalSandbox,
                started_at: Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap(),
                executed_setup_count: 1,
            },
            stage_results: Stage::ALL
                .iter()
                .zip(outcomes)
                .map(|(stage, outcome)| StageResult {
                    outcome,
                    exit_code: match outcome {
                        Outcome::Pass => Some(0),
                        Outcome::Fail => Some(1),
                        _ => None,
                    },
                    failed_command_index: matches!(outcome, Outcome::Fail | Outcome::Timeout).then_some(0),
                    execution: if outcome == Outcome::Skipped { Execution::NotRun } else { Execution::Full },
                    ..StageResult::skipped(*stage)
                })
                .collect(),
            wall_time_s: 1.0,
            contract_hash: "h".into(),
            metadata: BTreeMap::new(),
        },
    )
}

proptest! {
    #![proptest_config(config())]

        fn validity_comes_only_from_clean_traces(t in trace()) {
        let gated = [Stage::Setup, Stage::Doctor, Stage::Minimal].iter().all(|s| t.outcome(*s) == Outcome::Pass);
        match t.session.mode {
            SessionMode::Warm => prop_assert_eq!(validity(&t), Err(VerifierError::WarmTraceRejected)),
            SessionMode::Clean => prop_assert_eq!(validity(&t), Ok(gated)),
        }
    }

        fn discovery_is_deterministic(files in prop::collection::btree_map(
        prop_oneof![
            prop::sample::select(vec![
                "requirements.txt", "package.json", "yarn.lock", "Cargo.toml", "go.mod", "Makefile",
                "pyproject.toml", "CMakeLists.txt", "README.md", ".github/workflows/ci.yml",
            ]).prop_map(String::from),
            "(src|lib|tests)/[a-z]{1,6}\\.(py|js|rs|go|c)",
        ],
        "[ -~]{0,80}",
        0..12,
    )) {
        let write = |root: &Path, reverse: bool| {
            let mut items: Vec<_> = files.iter().collect();
            if reverse {
                items.reverse();
            }
            for (path, body) in items {
                let p = root.join(path);
                fs::create_dir_all(p.parent().unwrap()).unwrap();
                fs::write(p, body).unwrap();
            }
        };
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        write(a.path(), false);
        write(b.path(), true);
        let limits = ScanLimits::default();
        let ra = to_stable_string(&scan_repository(&RepoSnapshot::in_place(a.path()).unwrap(), &limits));
        let rb = to_stable_string(&scan_repository(&RepoSnapshot::in_place(b.path()).unwrap(), &limits));
        let again = to_stable_string(&scan_repository(&RepoSnapshot::in_place(a.path()).unwrap(), &limits));
        prop_assert_eq!(&ra, &rb);
        prop_assert_eq!(&ra, &again);
    }
}

/// Every suite by name, for harnesses that run them outside libtest.
pub fn suites() -> Vec<(&'static str, fn())> {
    vec![
        ("plan_contract_round_trip", plan_contract_round_trip as fn()),
        ("replace_touches_only_its_target", replace_touches_only_its_target),
        ("move_then_move_back_is_identity", move_then_move_back_is_identity),
        ("fail_fast_runs_exactly_k_plus_one_commands", fail_fast_runs_exactly_k_plus_one_commands),
        ("validity_comes_only_from_clean_traces", validity_comes_only_from_clean_traces),
        ("discovery_is_deterministic", discovery_is_deterministic),
    ]
}

pub fn run(name: &str) {
    let (_, f) = suites().into_iter().find(|(n, _)| *n == name).expect("known suite");
    f()
}
