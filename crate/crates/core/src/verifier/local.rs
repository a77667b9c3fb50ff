use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Duration;

use tempfile::TempDir;
use walkdir::WalkDir;

use super::process::{run_command, RawRun};
use super::{listing_digest, Executor, ExecutorKind, Stage, VerifierConfig, VerifierError};
use crate::evidence::{copy_tree, RepoSnapshot, SNAPSHOT_EXCLUDES};

/// Host variables forwarded into the sandbox when set. Toolchain managers
/// such as rustup locate their installs through these rather than `HOME`.
const PASSTHROUGH_ENV: &[&str] = &["RUSTUP_HOME", "CARGO_HOME"];

/// Hermetic process execution in a disposable temp root:
/// `repo/` (a copy of the snapshot), `home/`, `tmp/` and `scripts/`.
pub struct LocalSandbox {
    root: TempDir,
    env: Vec<(String, OsString)>,
    tail_bytes: usize,
    log_dir: Option<PathBuf>,
    seq: usize,
}

impl LocalSandbox {
    pub fn open(snapshot: &RepoSnapshot, config: &VerifierConfig, session_id: &str) -> Result<Self, VerifierError> {
        let unavailable = |e: std::io::Error| VerifierError::ExecutorUnavailable(format!("sandbox root: {e}"));
        let root = tempfile::Builder::new().prefix("repoboot-sandbox-").tempdir().map_err(unavailable)?;
        for d in ["repo", "home", "tmp", "scripts"] {
            fs::create_dir_all(root.path().join(d)).map_err(unavailable)?;
        }
        copy_tree(&snapshot.root, &root.path().join("repo"), SNAPSHOT_EXCLUDES).map_err(unavailable)?;

        let mut path: Vec<PathBuf> = config.tool_dirs.clone();
        path.extend(std::env::split_paths(&std::env::var_os("PATH").unwrap_or_default()));
        let path = std::env::join_paths(path).map_err(|e| VerifierError::ExecutorUnavailable(e.to_string()))?;
        let p = |d: &str| root.path().join(d).into_os_string();
        let mut env = vec![
            ("PATH".to_string(), path),
            ("HOME".to_string(), p("home")),
            ("TMPDIR".to_string(), p("tmp")),
            ("LANG".to_string(), "C.UTF-8".into()),
            ("LC_ALL".to_string(), "C.UTF-8".into()),
            ("TZ".to_string(), "UTC".into()),
            ("REPO_ROOT".to_string(), p("repo")),
        ];
        for var in PASSTHROUGH_ENV {
            if let Some(v) = std::env::var_os(var) {
                env.push((var.to_string(), v));
            }
        }
        let log_dir = config.log_dir.as_ref().map(|d| d.join(session_id));
        if let Some(d) = &log_dir {
            fs::create_dir_all(d).map_err(unavailable)?;
        }
        Ok(Self { root, env, tail_bytes: config.log_tail_bytes, log_dir, seq: 0 })
    }

    pub fn repo_dir(&self) -> PathBuf {
        self.root.path().join("repo")
    }
}

/// `path size` lines for every regular file under `root`, skipping
/// snapshot-excluded directories, sorted bytewise.
pub(crate) fn listing_lines(root: &Path) -> std::io::Result<Vec<String>> {
    let mut lines = Vec::new();
    let walker = WalkDir::new(root)
        .min_depth(1)
        .into_iter()
        .filter_entry(|e| !SNAPSHOT_EXCLUDES.iter().any(|x| e.file_name() == *x));
    for entry in walker {
        let entry = entry.map_err(std::io::Error::other)?;
        if entry.file_type().is_file() {
            let rel = entry.path().strip_prefix(root).expect("under root");
            lines.push(format!("{} {}", rel.display(), entry.metadata().map_err(std::io::Error::other)?.len()));
        }
    }
    lines.sort();
    Ok(lines)
}

impl Executor for LocalSandbox {
    fn kind(&self) -> ExecutorKind {
        ExecutorKind::LocalSandbox
    }

    fn run_script(
        &mut self,
        stage: Stage,
        script: &str,
        args: &[&str],
        timeout_s: u64,
    ) -> Result<RawRun, VerifierError> {
        self.seq += 1;
        let path = self.root.path().join("scripts").join(format!("{:02}_{stage}.sh", self.seq));
        fs::write(&path, script).map_err(|e| VerifierError::Io(e.to_string()))?;
        let mut cmd = Command::new("sh");
        cmd.arg(&path).args(args).current_dir(self.repo_dir()).env_clear();
        for (k, v) in &self.env {
            cmd.env(k, v);
        }
        let log = self.log_dir.as_ref().map(|d| d.join(format!("{:02}_{stage}", self.seq)));
        run_command(cmd, None, Duration::from_secs(timeout_s), self.tail_bytes, log.as_deref())
            .map_err(|e| VerifierError::Io(e.to_string()))
    }

    fn listing_hash(&mut self) -> Result<String, VerifierError> {
        listing_lines(&self.repo_dir()).map(|l| listing_digest(&l)).map_err(|e| VerifierError::Io(e.to_string()))
    }

    fn close(&mut self) {}
}
