use std::process::{Command, Stdio};
use std::time::Duration;

use super::process::{run_command, RawRun};
use super::{listing_digest, Executor, ExecutorKind, Stage, VerifierConfig, VerifierError};
use crate::evidence::{copy_tree, RepoSnapshot, SNAPSHOT_EXCLUDES};

/// Extra host-side allowance on top of the in-container `timeout`.
const CLIENT_SLACK_S: u64 = 10;

/// Drives a Docker-compatible runtime through its CLI.
pub struct Container {
    runtime: String,
    id: String,
    mount_path: String,
    tail_bytes: usize,
    log_dir: Option<std::path::PathBuf>,
    seq: usize,
    closed: bool,
}

fn runtime_output(runtime: &str, args: &[&str]) -> Result<String, String> {
    let out = Command::new(runtime).args(args).stdin(Stdio::null()).output().map_err(|e| format!("{runtime}: {e}"))?;
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).trim().to_string())
    } else {
        Err(format!("{runtime} {}: {}", args.first().unwrap_or(&""), String::from_utf8_lossy(&out.stderr).trim()))
    }
}

/// True when the runtime answers `info`.
pub fn runtime_available(runtime: &str) -> bool {
    runtime_output(runtime, &["info", "--format", "{{.ServerVersion}}"]).is_ok()
}

impl Container {
    pub fn open(snapshot: &RepoSnapshot, config: &VerifierConfig, session_id: &str) -> Result<Self, VerifierError> {
        let rt = config.runtime.as_str();
        runtime_output(rt, &["info", "--format", "{{.ServerVersion}}"]).map_err(VerifierError::ExecutorUnavailable)?;
        if runtime_output(rt, &["image", "inspect", &config.base_image]).is_err() {
            runtime_output(rt, &["pull", &config.base_image]).map_err(VerifierError::ImageUnavailable)?;
        }
        let mut create = vec!["create", "--label", "repoboot=1", "-w", config.mount_path.as_str()];
        if !config.network_allowed {
            create.extend(["--network", "none"]);
        }
        create.extend([config.base_image.as_str(), "sleep", "infinity"]);
        let id = runtime_output(rt, &create).map_err(VerifierError::ExecutorUnavailable)?;
        let mut c = Self {
            runtime: rt.to_string(),
            id,
            mount_path: config.mount_path.clone(),
            tail_bytes: config.log_tail_bytes,
            log_dir: config.log_dir.as_ref().map(|d| d.join(session_id)),
            seq: 0,
            closed: false,
        };
        c.populate(snapshot).inspect_err(|_| c.close())?;
        if let Some(d) = &c.log_dir {
            std::fs::create_dir_all(d).map_err(|e| VerifierError::Io(e.to_string()))?;
        }
        Ok(c)
    }

    fn populate(&self, snapshot: &RepoSnapshot) -> Result<(), VerifierError> {
        let fail = VerifierError::ExecutorUnavailable;
        runtime_output(&self.runtime, &["start", &self.id]).map_err(fail)?;
        runtime_output(&self.runtime, &["exec", &self.id, "mkdir", "-p", &self.mount_path]).map_err(fail)?;
        // Stage a filtered copy so excluded directories never enter the image.
        let staging = tempfile::tempdir().map_err(|e| VerifierError::Io(e.to_string()))?;
        copy_tree(&snapshot.root, staging.path(), SNAPSHOT_EXCLUDES).map_err(|e| VerifierError::Io(e.to_string()))?;
        let src = format!("{}/.", staging.path().display());
        let dest = format!("{}:{}", self.id, self.mount_path);
        runtime_output(&self.runtime, &["cp", &src, &dest]).map_err(fail)?;
        Ok(())
    }
}

impl Executor for Container {
    fn kind(&self) -> ExecutorKind {
        ExecutorKind::Container
    }

    fn run_script(
        &mut self,
        stage: Stage,
        script: &str,
        args: &[&str],
        timeout_s: u64,
    ) -> Result<RawRun, VerifierError> {
        if self.closed {
            return Err(VerifierError::SessionClosed);
        }
        self.seq += 1;
        let mut cmd = Command::new(&self.runtime);
        let repo_root = format!("REPO_ROOT={}", self.mount_path);
        let t = timeout_s.to_string();
        cmd.args(["exec", "-i", "-e", &repo_root, "-e", "LANG=C.UTF-8", "-e", "TZ=UTC", &self.id])
            .args(["timeout", "-k", "2", &t, "sh", "-s", "--"])
            .args(args);
        let log = self.log_dir.as_ref().map(|d| d.join(format!("{:02}_{stage}", self.seq)));
        let mut run = run_command(
            cmd,
            Some(script),
            Duration::from_secs(timeout_s + CLIENT_SLACK_S),
            self.tail_bytes,
            log.as_deref(),
        )
        .map_err(|e| VerifierError::Io(e.to_string()))?;
        // coreutils `timeout` exits 124 on expiry (137 after its own KILL).
        if matches!(run.exit_code, Some(124) | Some(137)) && run.duration_s + 0.5 >= timeout_s as f64 {
            run.timed_out = true;
        }
        Ok(run)
    }

    fn listing_hash(&mut self) -> Result<String, VerifierError> {
        let find = format!(
            "cd {} && find . \\( -name .git -o -name .bootstrap \\) -prune -o -type f -printf '%P %s\\n' | LC_ALL=C sort",
            self.mount_path
        );
        let out = runtime_output(&self.runtime, &["exec", &self.id, "sh", "-c", &find])
            .map_err(VerifierError::ExecutorUnavailable)?;
        let lines: Vec<String> = out.lines().map(str::to_string).collect();
        Ok(listing_digest(&lines))
    }

    fn close(&mut self) {
        if !self.closed {
            self.closed = true;
            let _ = runtime_output(&self.runtime, &["rm", "-f", &self.id]);
        }
    }
}

impl Drop for Container {
    fn drop(&mut self) {
        self.close();
    }
}
