//! Child-process execution with streaming marker tracking, bounded tails and
//! process-group termination.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::Path;
use std::process::{Child, Command, ExitStatus, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use crate::contract::MARKER_PREFIX;

/// Grace period between SIGTERM and SIGKILL.
pub const TERMINATION_GRACE: Duration = Duration::from_secs(2);

const POLL: Duration = Duration::from_millis(10);

#[derive(Debug, Clone, PartialEq)]
pub struct RawRun {
    pub exit_code: Option<i32>,
    pub timed_out: bool,
    pub stdout_tail: String,
    pub stderr_tail: String,
    pub markers_seen: usize,
    pub last_marker: Option<usize>,
    pub duration_s: f64,
}

/// Keeps the last `cap` bytes written to it.
struct Tail {
    buf: VecDeque<u8>,
    cap: usize,
}

impl Tail {
    fn new(cap: usize) -> Self {
        Self { buf: VecDeque::new(), cap }
    }

    fn push(&mut self, bytes: &[u8]) {
        let bytes = if bytes.len() > self.cap { &bytes[bytes.len() - self.cap..] } else { bytes };
        let overflow = (self.buf.len() + bytes.len()).saturating_sub(self.cap);
        self.buf.drain(..overflow);
        self.buf.extend(bytes);
    }

    fn into_string(self) -> String {
        let bytes: Vec<u8> = self.buf.into();
        String::from_utf8_lossy(&bytes).into_owned()
    }
}

struct StreamSummary {
    tail: String,
    markers: usize,
    last_marker: Option<usize>,
}

fn parse_marker(line: &[u8]) -> Option<usize> {
    let line = std::str::from_utf8(line).ok()?.trim_end_matches(['\n', '\r']);
    line.strip_prefix(MARKER_PREFIX)?.parse().ok()
}

fn drain(stream: impl Read, cap: usize, track_markers: bool, mut log: Option<File>) -> StreamSummary {
    let mut reader = BufReader::new(stream);
    let mut tail = Tail::new(cap);
    let (mut markers, mut last_marker) = (0, None);
    let mut line = Vec::new();
    loop {
        line.clear();
        match reader.read_until(b'\n', &mut line) {
            Ok(0) | Err(_) => break,
            Ok(_) => {}
        }
        if track_markers {
            if let Some(n) = parse_marker(&line) {
                markers += 1;
                last_marker = Some(n);
            }
        }
        if let Some(f) = log.as_mut() {
            let _ = f.write_all(&line);
        }
        tail.push(&line);
    }
    StreamSummary { tail: tail.into_string(), markers, last_marker }
}

fn signal_group(pid: u32, signal: libc::c_int) {
    // SAFETY: kill(2) with a negative pid signals the process group the child
    // leads; a stale group id only yields ESRCH.
    unsafe {
        libc::kill(-(pid as libc::pid_t), signal);
    }
}

fn wait_until(child: &mut Child, deadline: Instant) -> io::Result<Option<ExitStatus>> {
    loop {
        if let Some(status) = child.try_wait()? {
            return Ok(Some(status));
        }
        if Instant::now() >= deadline {
            return Ok(None);
        }
        thread::sleep(POLL);
    }
}

/// Runs `cmd` in its own process group. On timeout the group receives
/// SIGTERM, then SIGKILL after [`TERMINATION_GRACE`]. Stragglers left in the
/// group after a normal exit are killed too.
pub fn run_command(
    mut cmd: Command,
    stdin: Option<&str>,
    timeout: Duration,
    tail_bytes: usize,
    log_prefix: Option<&Path>,
) -> io::Result<RawRun> {
    cmd.process_group(0)
        .stdin(if stdin.is_some() { Stdio::piped() } else { Stdio::null() })
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    let open_log = |suffix: &str| -> Option<File> {
        let p = log_prefix?;
        File::create(p.with_extension(suffix)).ok()
    };
    let (out_log, err_log) = (open_log("stdout.log"), open_log("stderr.log"));

    let start = Instant::now();
    let mut child = cmd.spawn()?;
    let pid = child.id();
    let stdout = child.stdout.take().expect("piped stdout");
    let stderr = child.stderr.take().expect("piped stderr");
    let out_thread = thread::spawn(move || drain(stdout, tail_bytes, true, out_log));
    let err_thread = thread::spawn(move || drain(stderr, tail_bytes, false, err_log));
    if let (Some(text), Some(mut pipe)) = (stdin, child.stdin.take()) {
        let text = text.to_string();
        // Written from a thread so a child that ignores stdin cannot block us.
        thread::spawn(move || {
            let _ = pipe.write_all(text.as_bytes());
        });
    }

    let mut timed_out = false;
    let status = match wait_until(&mut child, start + timeout)? {
        Some(s) => s,
        None => {
            timed_out = true;
            signal_group(pid, libc::SIGTERM);
            match wait_until(&mut child, Instant::now() + TERMINATION_GRACE)? {
                Some(s) => s,
                None => {
                    signal_group(pid, libc::SIGKILL);
                    child.wait()?
                }
            }
        }
    };
    signal_group(pid, libc::SIGKILL);
    let duration_s = start.elapsed().as_secs_f64();

    let out = out_thread.join().unwrap_or(StreamSummary { tail: String::new(), markers: 0, last_marker: None });
    let err = err_thread.join().map(|s| s.tail).unwrap_or_default();
    let exit_code = status.code().or_else(|| status.signal().map(|s| 128 + s));
    Ok(RawRun {
        exit_code,
        timed_out,
        stdout_tail: out.tail,
        stderr_tail: err,
        markers_seen: out.markers,
        last_marker: out.last_marker,
        duration_s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sh(script: &str) -> Command {
        let mut c = Command::new("sh");
        c.arg("-c").arg(script);
        c
    }

    #[test]
    fn tail_keeps_last_bytes() {
        let mut t = Tail::new(4);
        t.push(b"abc");
        t.push(b"defgh");
        assert_eq!(t.into_string(), "efgh");
    }

    #[test]
    fn markers_and_exit_code() {
        let r = run_command(
            sh("echo '### CMD 0'; echo '### CMD 1'; echo oops >&2; exit 3"),
            None,
            Duration::from_secs(10),
            1024,
            None,
        )
        .unwrap();
        assert_eq!(r.exit_code, Some(3));
        assert_eq!(r.markers_seen, 2);
        assert_eq!(r.last_marker, Some(1));
        assert_eq!(r.stderr_tail, "oops\n");
        assert!(!r.timed_out);
    }

    #[test]
    fn timeout_kills_the_group() {
        let r = run_command(sh("sleep 30 & sleep 30; wait"), None, Duration::from_secs(1), 1024, None).unwrap();
        assert!(r.timed_out);
        assert!(r.duration_s >= 1.0 && r.duration_s < 1.0 + 2.0 + 1.0, "{}", r.duration_s);
    }

    #[test]
    fn stdin_is_fed_and_logs_written() {
        let d = tempfile::tempdir().unwrap();
        let prefix = d.path().join("run");
        let mut c = Command::new("sh");
        c.arg("-s");
        let r = run_command(c, Some("echo hi\n"), Duration::from_secs(10), 1024, Some(&prefix)).unwrap();
        assert_eq!(r.exit_code, Some(0));
        assert_eq!(r.stdout_tail, "hi\n");
        assert_eq!(std::fs::read_to_string(d.path().join("run.stdout.log")).unwrap(), "hi\n");
    }
}
