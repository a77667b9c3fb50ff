#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use repoboot_core::backends::{Backends, ScriptedBackend};
use repoboot_core::json::read_file;
use repoboot_core::orchestrator::PipelineConfig;
use repoboot_core::verifier::{ExecutionTrace, VerifierConfig};

/// The fixtures the rule backends must bootstrap unaided.
pub const CORPUS: [&str; 6] = ["py-pip", "poetry-missing-dep", "node-yarn", "make-c", "cargo", "go-modules"];

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn toolbox() -> PathBuf {
    fixtures().join("toolbox/bin")
}

/// Copies a fixture into a scratch directory so runs can write `.bootstrap`
/// next to it. Returns the guard and the copied repository root.
pub fn copy_fixture(name: &str) -> (tempfile::TempDir, PathBuf) {
    let tmp = tempfile::tempdir().unwrap();
    let dest = tmp.path().join(name);
    let src = fixtures().join(name);
    for entry in walkdir::WalkDir::new(&src) {
        let entry = entry.unwrap();
        let to = dest.join(entry.path().strip_prefix(&src).unwrap());
        if entry.file_type().is_dir() {
            fs::create_dir_all(&to).unwrap();
        } else {
            fs::copy(entry.path(), &to).unwrap();
        }
    }
    (tmp, dest)
}

pub fn local_verifier() -> VerifierConfig {
    VerifierConfig { tool_dirs: vec![toolbox()], ..VerifierConfig::local() }
}

pub fn local_config(runs_dir: &Path) -> PipelineConfig {
    PipelineConfig { verifier: local_verifier(), runs_dir: runs_dir.to_path_buf(), ..PipelineConfig::default() }
}

pub fn scripted(scenario: &str) -> Backends {
    Backends::single(Arc::new(ScriptedBackend::new(fixtures().join("scripted").join(scenario)).unwrap()))
}

/// Every `trace_NNN.json` in a run directory, in order.
pub fn traces(run_dir: &Path) -> Vec<ExecutionTrace> {
    let mut paths: Vec<PathBuf> = fs::read_dir(run_dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with("trace_"))
        .collect();
    paths.sort();
    paths.iter().map(|p| read_file(p).unwrap()).collect()
}

/// The `.bootstrap` directories materialized under `contracts/`, sorted.
pub fn round_contracts(run_dir: &Path) -> Vec<PathBuf> {
    let mut dirs: Vec<PathBuf> =
        fs::read_dir(run_dir.join("contracts")).unwrap().map(|e| e.unwrap().path().join(".bootstrap")).collect();
    dirs.sort();
    dirs
}
