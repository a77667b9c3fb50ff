use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::verifier::{ExecutionTrace, Outcome, Stage, StageResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureCategory {
    MissingDependency,
    MissingToolchain,
    WrongCwd,
    CommandNotFound,
    Permission,
    Network,
    Timeout,
    TestFailure,
    Unknown,
}

impl FailureCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureCategory::MissingDependency => "missing_dependency",
            FailureCategory::MissingToolchain => "missing_toolchain",
            FailureCategory::WrongCwd => "wrong_cwd",
            FailureCategory::CommandNotFound => "command_not_found",
            FailureCategory::Permission => "permission",
            FailureCategory::Network => "network",
            FailureCategory::Timeout => "timeout",
            FailureCategory::TestFailure => "test_failure",
            FailureCategory::Unknown => "unknown",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureSignature {
    pub category: FailureCategory,
    /// Excerpt of the stage output that triggered the category.
    pub matched_text: String,
    /// Module, command or path named by the match, when there is one.
    pub subject: Option<String>,
    pub stage: Stage,
    pub command_index: Option<usize>,
    pub command: Option<String>,
}

impl FailureSignature {
    /// `category@stage/index: matched text`.
    pub fn summary(&self) -> String {
        let idx = self.command_index.map(|i| format!("/{i}")).unwrap_or_default();
        format!("{}@{}{idx}: {}", self.category.as_str(), self.stage, self.matched_text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum DiagnoseError {
    #[error("every gated stage passed")]
    NoFailure,
}

/// Programs whose absence means a missing language toolchain rather than a
/// missing project tool.
pub const TOOLCHAIN_PROGRAMS: &[&str] = &[
    "python", "python3", "pip", "pip3", "node", "npm", "npx", "go", "cargo", "rustc", "rustup", "cmake", "make", "gcc",
    "cc", "g++", "c++", "clang", "java", "javac", "mvn", "gradle", "ruby", "gem", "bundle", "php", "composer",
    "dotnet", "deno", "bun",
];

/// Ordered pattern table: the first category with a match wins. Capture
/// group 1, when present, is the subject.
static TABLE: LazyLock<Vec<(FailureCategory, Regex)>> = LazyLock::new(|| {
    let rows: &[(FailureCategory, &str)] = &[
        (FailureCategory::MissingDependency, r"No module named '?([A-Za-z0-9_.\-]+)'?"),
        (FailureCategory::MissingDependency, r"Cannot find module '([^']+)'"),
        (FailureCategory::MissingDependency, r"Error: Cannot find package '([^']+)'"),
        (FailureCategory::MissingDependency, r"no required module provides package ([^\s;]+)"),
        (FailureCategory::MissingDependency, r#"cannot find package "([^"]+)""#),
        (FailureCategory::MissingDependency, r"fatal error: ([\w/.\-]+\.h): No such file or directory"),
        (FailureCategory::MissingDependency, r"(?:unresolved import|can't find crate for) `([\w:]+)`"),
        (FailureCategory::MissingDependency, r"ImportError: cannot import name '?(\w+)'?"),
        (FailureCategory::WrongCwd, r"can't open file '([^']+)': \[Errno 2\] No such file or directory"),
        (FailureCategory::WrongCwd, r"ENOENT: no such file or directory, open '([^']*package\.json)'"),
        (FailureCategory::WrongCwd, r"No targets specified and no makefile found"),
        (FailureCategory::WrongCwd, r"No rule to make target '?([\w./\-]+)'?"),
        (FailureCategory::WrongCwd, r"could not find `(Cargo\.toml)`"),
        (FailureCategory::WrongCwd, r"(go\.mod) file not found"),
        (FailureCategory::WrongCwd, r"could not find a (pyproject\.toml)"),
        (
            FailureCategory::WrongCwd,
            r"Could not open requirements file: \[Errno 2\] No such file or directory: '([^']+)'",
        ),
        (FailureCategory::WrongCwd, r"cd: (?:\d+: )?(?:can't cd to )?([^\s:]+)(?:: No such file or directory)?$"),
        (FailureCategory::WrongCwd, r"The source directory \S+ does not (?:exist|appear to contain (CMakeLists\.txt))"),
        (FailureCategory::CommandNotFound, r"(?m)(?:^|: )(?:line \d+: |\d+: )?([\w.+\-/]+): (?:command )?not found"),
        (FailureCategory::CommandNotFound, r"(?m)exec: ([\w.+\-/]+): not found"),
        (FailureCategory::CommandNotFound, r"(?m)([\w.+\-/]+): No such file or directory$"),
        (FailureCategory::Permission, r"(?i)permission denied|EACCES|operation not permitted"),
        (
            FailureCategory::Network,
            r"(?i)could not resolve host|temporary failure in name resolution|network is unreachable|connection refused|ENOTFOUND|EAI_AGAIN|failed to establish a new connection|getaddrinfo|connection timed out",
        ),
        (
            FailureCategory::TestFailure,
            r"(?m)^FAILED |\d+ failed|AssertionError|test result: FAILED|^--- FAIL|^FAIL\b|Tests:\s+\d+ failed|Test failed|tests? failed|\*\*\* \[[\w.\-]*test[\w.\-]*\] Error",
        ),
    ];
    rows.iter().map(|(c, p)| (*c, Regex::new(&format!("(?m){p}")).expect("diagnosis pattern"))).collect()
});

fn last_line(text: &str) -> Option<&str> {
    text.lines().rev().map(str::trim).find(|l| !l.is_empty())
}

fn classify_stage(result: &StageResult) -> (FailureCategory, String, Option<String>) {
    // stderr first: tools report there, and it is usually shorter.
    let tails = [&result.stderr_tail, &result.stdout_tail];
    if result.outcome == Outcome::Timeout {
        let text = tails.iter().find_map(|t| last_line(t)).unwrap_or("").to_string();
        return (FailureCategory::Timeout, text, None);
    }
    for (category, re) in TABLE.iter() {
        for tail in tails {
            if let Some(c) = re.captures(tail) {
                let matched = c.get(0).expect("whole match").as_str().trim().to_string();
                let mut subject = c.get(1).map(|m| m.as_str().to_string());
                let mut category = *category;
                if category == FailureCategory::CommandNotFound {
                    let prog = subject.as_deref().map(crate::shell::basename).unwrap_or("");
                    if prog.starts_with('.') || prog.is_empty() {
                        continue;
                    }
                    if TOOLCHAIN_PROGRAMS.contains(&prog) {
                        category = FailureCategory::MissingToolchain;
                    }
                    subject = Some(prog.to_string());
                }
                return (category, matched, subject);
            }
        }
    }
    let text = tails.iter().find_map(|t| last_line(t)).unwrap_or("").to_string();
    (FailureCategory::Unknown, text, None)
}

/// Signature of the first failing gated stage.
pub fn diagnose_trace(trace: &ExecutionTrace) -> Result<FailureSignature, DiagnoseError> {
    let failing = trace.first_gated_failure().ok_or(DiagnoseError::NoFailure)?;
    Ok(diagnose_stage(failing))
}

/// What a repair round should target: the first gated failure, otherwise a
/// failing strongest stage.
pub fn repair_target(trace: &ExecutionTrace) -> Option<FailureSignature> {
    diagnose_trace(trace).ok().or_else(|| {
        trace
            .stage(Stage::Strongest)
            .filter(|r| matches!(r.outcome, Outcome::Fail | Outcome::Timeout))
            .map(diagnose_stage)
    })
}

/// Signature of one non-passing stage (gated or not).
pub fn diagnose_stage(result: &StageResult) -> FailureSignature {
    let (category, matched_text, subject) = classify_stage(result);
    FailureSignature {
        category,
        matched_text,
        subject,
        stage: result.stage,
        command_index: result.failed_command_index,
        command: result.failed_command.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verifier::tests_support::trace_with;

    fn diag(stage: Stage, outcome: Outcome, text: &str) -> FailureSignature {
        // The stage under test comes first so it shadows the default passes.
        diagnose_trace(&trace_with(&[
            (stage, outcome, text),
            (Stage::Setup, Outcome::Pass, ""),
            (Stage::Doctor, Outcome::Pass, ""),
        ]))
        .unwrap()
    }

    #[test]
    fn categories() {
        let cases = [
            ("ModuleNotFoundError: No module named 'leftpad'", FailureCategory::MissingDependency, Some("leftpad")),
            ("sh: 1: frobnicate: not found", FailureCategory::CommandNotFound, Some("frobnicate")),
            ("/bin/sh: 3: yarn: not found", FailureCategory::CommandNotFound, Some("yarn")),
            ("bash: line 1: cargo: command not found", FailureCategory::MissingToolchain, Some("cargo")),
            ("make: *** No targets specified and no makefile found.  Stop.", FailureCategory::WrongCwd, None),
            (
                "python3: can't open file 'manage.py': [Errno 2] No such file or directory",
                FailureCategory::WrongCwd,
                Some("manage.py"),
            ),
            ("mkdir: cannot create directory '/opt/x': Permission denied", FailureCategory::Permission, None),
            ("curl: (6) Could not resolve host: example.com", FailureCategory::Network, None),
            ("FAILED tests/test_a.py::test_x - assert 1 == 2\n1 failed in 0.1s", FailureCategory::TestFailure, None),
            ("something odd happened", FailureCategory::Unknown, None),
        ];
        for (text, cat, subject) in cases {
            let s = diag(Stage::Minimal, Outcome::Fail, text);
            assert_eq!(s.category, cat, "{text}");
            assert_eq!(s.subject.as_deref(), subject, "{text}");
            assert!(text.contains(&s.matched_text), "{text}: {}", s.matched_text);
        }
    }

    #[test]
    fn timeout_wins_and_no_failure() {
        let s = diag(Stage::Doctor, Outcome::Timeout, "No module named 'x'\nstill waiting");
        assert_eq!(s.category, FailureCategory::Timeout);
        assert_eq!(s.stage, Stage::Doctor);
        let all_pass = trace_with(&[
            (Stage::Setup, Outcome::Pass, ""),
            (Stage::Doctor, Outcome::Pass, ""),
            (Stage::Minimal, Outcome::Pass, ""),
            (Stage::Strongest, Outcome::Fail, "boom"),
        ]);
        assert_eq!(diagnose_trace(&all_pass), Err(DiagnoseError::NoFailure));
    }

    #[test]
    fn summary_shape() {
        let s = diag(Stage::Minimal, Outcome::Fail, "No module named 'leftpad'");
        assert_eq!(s.summary(), "missing_dependency@minimal/0: No module named 'leftpad'");
    }
}
