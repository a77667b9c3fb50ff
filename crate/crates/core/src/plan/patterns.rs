//! Command pattern tables: degenerate verification, test/build classes,
//! mutation and risk detection.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::CommandSpec;
use crate::shell::{basename, program_words, split_segments};

/// Programs that only change shell state.
const NEUTRAL_PROGRAMS: &[&str] = &["cd", "export", "set", "unset", "source", ".", "pushd", "popd"];

/// Programs whose success says nothing about the repository.
const IDENTITY_PROGRAMS: &[&str] = &[
    "true", ":", "echo", "printf", "ls", "dir", "pwd", "tree", "which", "type", "whoami", "uname", "hostname", "date",
];

/// Sole arguments that turn any program into a version query.
const VERSION_ARGS: &[&str] = &["--version", "-V", "version", "-version"];

/// Runtimes where a lone `-v` means "print version".
const SHORT_V_PROGRAMS: &[&str] = &["node", "npm", "yarn", "pnpm", "deno", "bun"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SegmentClass {
    Neutral,
    Degenerate,
    Substantive,
}

fn classify_segment(segment: &str) -> SegmentClass {
    let words = program_words(segment);
    let Some(first) = words.first() else {
        return SegmentClass::Neutral;
    };
    let prog = basename(first);
    if NEUTRAL_PROGRAMS.contains(&prog) {
        return SegmentClass::Neutral;
    }
    if IDENTITY_PROGRAMS.contains(&prog) {
        return SegmentClass::Degenerate;
    }
    let mut args: Vec<&str> = words[1..].iter().map(String::as_str).collect();
    match prog {
        "exit" => {
            return if args.is_empty() || args == ["0"] { SegmentClass::Degenerate } else { SegmentClass::Substantive };
        }
        "command" if args.first() == Some(&"-v") => return SegmentClass::Degenerate,
        "cat" => {
            let files: Vec<_> = args.iter().filter(|a| !a.starts_with('-')).collect();
            if files.len() == 1 {
                return SegmentClass::Degenerate;
            }
        }
        _ => {}
    }
    // `python3 -m pip --version` -> inspect the module's arguments.
    if prog.starts_with("python") && args.first() == Some(&"-m") && args.len() >= 2 {
        args.drain(..2);
    }
    if args.len() == 1 && (VERSION_ARGS.contains(&args[0]) || (args[0] == "-v" && SHORT_V_PROGRAMS.contains(&prog))) {
        return SegmentClass::Degenerate;
    }
    SegmentClass::Substantive
}

/// True when every segment of `cmd` is a version query, unconditional truth,
/// echo, listing or single-file `cat` (ignoring `cd`/`export` plumbing).
pub fn is_degenerate_cmd(cmd: &str) -> bool {
    let segments = split_segments(cmd);
    if segments.is_empty() {
        return true;
    }
    segments.iter().all(|s| classify_segment(&s.text) != SegmentClass::Substantive)
}

/// A verification command that cannot evidence a usable checkout.
/// Only meaningful for non-empty repositories.
pub fn detect_degenerate_verify(command: &CommandSpec, repo_nonempty: bool) -> bool {
    repo_nonempty && is_degenerate_cmd(&command.cmd)
}

static TEST_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?x)
        (^|[\s;&|(/])(
            py\.?test |
            tox | nox |
            jest | mocha | vitest | ava | karma |
            rspec | phpunit | ctest |
            (python[0-9.]*\s+-m\s+(pytest|unittest|nose2?)) |
            ((npm|pnpm|yarn|bun)\s+(run\s+)?test) |
            (cargo\s+(test|nextest)) |
            (go\s+test) |
            (make\s+(-\S+\s+)*(test|tests|check)) |
            (mvn\s+(\S+\s+)*(test|verify)) |
            (\.?/?gradlew?\s+(\S+\s+)*(test|check)) |
            ((bazel|bazelisk)\s+test) |
            ((meson|ninja)\s+test) |
            (dotnet\s+test)
        )(\s|$|;|&|\|)",
    )
    .expect("test pattern")
});

static IMPORT_CHECK_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r#"(?x)
        (python[0-9.]*\s+-c\s+["']?\s*(import|from)\s) |
        (python[0-9.]*\s+-m\s+(compileall|py_compile)) |
        (node\s+-e\s+["']?\s*require\() |
        (cargo\s+check) |
        (go\s+vet)
        "#,
    )
    .expect("import pattern")
});

static BUILD_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?x)
        (^|[\s;&|(/])(
            make | cmake | ninja | meson | tsc | gcc | g\+\+ | cc | clang | javac |
            (cargo\s+build) | (go\s+build) |
            ((npm|pnpm|yarn|bun)\s+(run\s+)?build) |
            (mvn\s+(compile|package|install)) |
            (\.?/?gradlew?\s+(build|assemble)) |
            ((bazel|bazelisk)\s+build) |
            (python[0-9.]*\s+-m\s+build) |
            (python[0-9.]*\s+setup\.py\s+build)
        )(\s|$|;|&|\|)",
    )
    .expect("build pattern")
});

/// Test-runner invocation anywhere in the command.
pub fn is_test_like(cmd: &str) -> bool {
    TEST_RE.is_match(cmd)
}

pub fn is_import_check(cmd: &str) -> bool {
    IMPORT_CHECK_RE.is_match(cmd)
}

/// Strength class of a verification command. Ordered weakest first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifyClass {
    Identity,
    ImportCheck,
    Build,
    TestSuite,
}

/// Places a command on the test-suite > build > import-check > identity
/// lattice. Project scripts that match none of the tables count as builds.
pub fn classify_verify(cmd: &str) -> VerifyClass {
    if is_degenerate_cmd(cmd) {
        VerifyClass::Identity
    } else if is_test_like(cmd) {
        VerifyClass::TestSuite
    } else if BUILD_RE.is_match(cmd) {
        VerifyClass::Build
    } else if is_import_check(cmd) {
        VerifyClass::ImportCheck
    } else {
        VerifyClass::Build
    }
}

static INSTALL_VERB_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?x)
        (^|[\s;&|(/])(
            ((pip[0-9.]*|python[0-9.]*\s+-m\s+pip)\s+install) |
            ((npm|pnpm)\s+(install|ci|i|add)) |
            (yarn(\s+(install|add))?\s*$) | (yarn\s+(install|add)) |
            ((apt-get|apt|yum|dnf|apk|brew|zypper|pacman)\s+(install|add|-S)) |
            (cargo\s+(install|build|fetch)) |
            (go\s+(get|install|build|mod\s+download)) |
            (poetry\s+(install|add|lock|update)) |
            (pipenv\s+(install|sync)) |
            (uv\s+(sync|pip\s+install|add)) |
            (gem\s+install) | (bundle\s+install) |
            (mvn\s+(install|package|compile)) |
            (conda\s+(install|create)) |
            (make(\s+(all|install|build))?\s*$) |
            (cmake\s+--build)
        )",
    )
    .expect("install verb pattern")
});

static WRITE_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?x)
        (^|[\s;&|(])(tee|mkdir|touch|rm|cp|mv|ln|chmod|chown|install|truncate|dd)\s |
        (^|[\s;&|(])sed\s+(-\S*\s+)*-i |
        (^|[\s;&|(])git\s+(checkout|reset|clean|pull|apply|stash|commit|add|am|rebase)\b
        ",
    )
    .expect("write pattern")
});

static REDIRECT_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(^|[^0-9&<>])>{1,2}\s*([^&\s>]+)").expect("redirect"));

/// Package installation, builds, or file-writing side effects.
pub fn is_mutating(cmd: &str) -> bool {
    // `command -v make` or `echo cargo build` only mention a verb.
    let mutating_segment = split_segments(cmd).iter().any(|s| {
        let quiet = program_words(&s.text)
            .first()
            .is_some_and(|p| matches!(basename(p), "command" | "which" | "type" | "echo" | "printf"));
        !quiet && (INSTALL_VERB_RE.is_match(&s.text) || WRITE_RE.is_match(&s.text))
    });
    if mutating_segment {
        return true;
    }
    REDIRECT_RE
        .captures_iter(cmd)
        .any(|c| !matches!(c.get(2).map(|m| m.as_str()), Some("/dev/null") | Some("/dev/stderr") | Some("/dev/stdout")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RiskKind {
    Privilege,
    RecursiveDelete,
    RemoteInstaller,
    CheckoutMutation,
}

pub(crate) static RISK_TABLE: LazyLock<Vec<(RiskKind, Regex)>> = LazyLock::new(|| {
    let rules: &[(RiskKind, &str)] = &[
        (RiskKind::Privilege, r"(^|[\s;&|(])(sudo|doas)\s|(^|[\s;&|(])su\s+(-\S+\s+)*-c\s"),
        (
            RiskKind::RecursiveDelete,
            r"(^|[\s;&|(])rm\s+(\S+\s+)*(-[a-zA-Z]*r[a-zA-Z]*f|-[a-zA-Z]*f[a-zA-Z]*r|-r\s+-f|-f\s+-r|--recursive\s+--force|--force\s+--recursive)",
        ),
        (
            RiskKind::RemoteInstaller,
            r#"(curl|wget)\b[^|;&]*\|\s*(sudo\s+)?(env\s+\S+\s+)?(ba|z|da)?sh\b|(ba|z)?sh\s+(-c\s+)?["']?\$\(\s*(curl|wget)|(ba|z)?sh\s+<\(\s*(curl|wget)"#,
        ),
        (
            RiskKind::CheckoutMutation,
            r"(^|[\s;&|(])git\s+(checkout|reset|clean|pull|apply|stash|am|rebase|switch|restore)\b",
        ),
    ];
    rules.iter().map(|(k, p)| (*k, Regex::new(p).expect("risk pattern"))).collect()
});

/// Risk kinds matched by a command with the matched text, in table order.
pub fn risk_matches(cmd: &str) -> Vec<(RiskKind, String)> {
    RISK_TABLE.iter().filter_map(|(k, r)| r.find(cmd).map(|m| (*k, m.as_str().trim().to_string()))).collect()
}

/// `cmd || true`, `cmd; exit 0` and friends hide a failing command.
pub fn swallows_failure(cmd: &str) -> bool {
    let segs = split_segments(cmd);
    segs.windows(2).any(|w| {
        let tail = classify_segment(&w[1].text) == SegmentClass::Degenerate;
        tail && matches!(w[0].next, crate::shell::Connector::Or | crate::shell::Connector::Seq)
    })
}
