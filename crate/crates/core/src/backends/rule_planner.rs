//! Deterministic planner: maps the detected package manager to a fixed
//! install/verify recipe. Used offline and as the baseline backend.

use std::collections::BTreeMap;
use std::path::Path;

use super::request::{CI_LABEL, DISCOVERY_LABEL};
use super::{Backend, BackendRequest, Completion, CompletionError, RequestKind};
use crate::evidence::{CiEvidenceReport, DiscoveryReport, PackageManager};
use crate::json::to_stable_string;
use crate::plan::{is_degenerate_cmd, is_test_like, BootstrapPlan, CommandSpec, Phase, Provenance};

/// Managers in the order the planner prefers them when several are present.
const PRIORITY: &[&str] = &["cargo", "go", "poetry", "pipenv", "uv", "pip", "yarn", "pnpm", "npm", "cmake", "make"];

#[derive(Debug, Clone, Copy, Default)]
pub struct RulePlanner;

impl Backend for RulePlanner {
    fn name(&self) -> String {
        "rule-planner".into()
    }

    fn complete(&self, request: &BackendRequest) -> Result<Completion, CompletionError> {
        if request.kind != RequestKind::Plan {
            return Err(CompletionError::Fatal("rule planner only answers plan requests".into()));
        }
        let discovery: DiscoveryReport = request
            .document(DISCOVERY_LABEL)
            .ok_or_else(|| CompletionError::Fatal("plan request without discovery report".into()))
            .and_then(|d| serde_json::from_str(d).map_err(|e| CompletionError::Fatal(e.to_string())))?;
        let ci: CiEvidenceReport =
            request.document(CI_LABEL).map(|d| serde_json::from_str(d).unwrap_or_default()).unwrap_or_default();
        Ok(Completion::text(to_stable_string(&rule_plan(&discovery, &ci))))
    }
}

/// Directory part of a repository-relative path, `.` for top level.
fn dir_of(path: &str) -> String {
    match Path::new(path).parent().map(|p| p.to_string_lossy().into_owned()) {
        Some(p) if !p.is_empty() => p,
        _ => ".".into(),
    }
}

fn join(dir: &str, name: &str) -> String {
    if dir == "." {
        name.to_string()
    } else {
        format!("{dir}/{name}")
    }
}

fn file_name(path: &str) -> &str {
    path.rsplit('/').next().unwrap_or(path)
}

struct Facts<'a> {
    discovery: &'a DiscoveryReport,
    dir: String,
}

impl Facts<'_> {
    fn has(&self, name: &str) -> bool {
        let p = join(&self.dir, name);
        self.discovery.structure_summary.entries.contains(&p)
    }

    fn text(&self, name: &str) -> Option<&str> {
        self.discovery.item(&join(&self.dir, name)).map(|i| i.snippet.as_str())
    }

    fn python_tests(&self) -> bool {
        self.discovery.structure_summary.entries.iter().any(|e| {
            let n = file_name(e);
            n.ends_with(".py") && (n.starts_with("test_") || n.ends_with("_test.py"))
        })
    }

    fn npm_script(&self, name: &str) -> bool {
        let Some(pkg) = self.text("package.json").and_then(|t| serde_json::from_str::<serde_json::Value>(t).ok())
        else {
            return false;
        };
        pkg.get("scripts")
            .and_then(|s| s.get(name))
            .and_then(|s| s.as_str())
            .is_some_and(|s| !s.contains("no test specified"))
    }

    fn make_targets(&self) -> Vec<String> {
        let text = ["Makefile", "makefile", "GNUmakefile"].iter().find_map(|n| self.text(n)).unwrap_or("");
        text.lines()
            .filter(|l| !l.starts_with(['\t', ' ', '#', '.']))
            .filter_map(|l| l.split_once(':'))
            .filter(|(_, rest)| !rest.starts_with('='))
            .flat_map(|(targets, _)| targets.split_whitespace().map(str::to_string))
            .collect()
    }
}

/// One manager's recipe: install commands, doctor tools, minimal verify.
struct Recipe {
    install: Vec<(String, String)>,
    tools: Vec<&'static str>,
    verify: (String, String),
    language: &'static str,
}

fn pair(cmd: impl Into<String>, reason: impl Into<String>) -> (String, String) {
    (cmd.into(), reason.into())
}

fn recipe(manager: &PackageManager, f: &Facts<'_>) -> Option<Recipe> {
    let trigger = file_name(&manager.trigger_file).to_string();
    let r = match manager.name.as_str() {
        "pip" => {
            let install = if trigger.starts_with("requirements") {
                pair(
                    format!("python3 -m pip install -r {trigger}"),
                    format!("install dependencies pinned in {trigger} with pip"),
                )
            } else {
                pair("python3 -m pip install --no-build-isolation -e .", "pip install the package in editable mode")
            };
            let verify = if f.python_tests() {
                pair("python3 -m pytest -q", "run the pytest suite")
            } else {
                pair("python3 -m compileall -q .", "compileall byte-compiles every python module")
            };
            Recipe { install: vec![install], tools: vec!["python3"], verify, language: "Python" }
        }
        "poetry" | "pipenv" | "uv" => {
            let tool = if manager.name == "uv" { "uv" } else { manager.name.as_str() };
            let install = match tool {
                "poetry" => pair("poetry install", "poetry install resolves the locked dependencies"),
                "pipenv" => pair("pipenv install --dev", "pipenv install the locked dependencies"),
                _ => pair("uv sync", "uv sync installs the locked dependencies"),
            };
            let verify = if f.python_tests() {
                pair(format!("{tool} run pytest -q"), format!("run the pytest suite through {tool}"))
            } else {
                pair(
                    format!("{tool} run python -m compileall -q ."),
                    format!("{tool} run compileall over every module"),
                )
            };
            let tools = match tool {
                "poetry" => vec!["poetry"],
                "pipenv" => vec!["pipenv"],
                _ => vec!["uv"],
            };
            Recipe { install: vec![install], tools, verify, language: "Python" }
        }
        "npm" | "yarn" | "pnpm" => {
            let tool = manager.name.as_str();
            let install = match tool {
                "yarn" => pair("yarn install --frozen-lockfile", "yarn install from the lockfile"),
                "pnpm" => pair("pnpm install --frozen-lockfile", "pnpm install from the lockfile"),
                _ if f.has("package-lock.json") => pair("npm ci", "npm ci installs from package-lock.json"),
                _ => pair("npm install", "npm install the declared dependencies"),
            };
            let verify = if f.npm_script("test") {
                pair(format!("{tool} test"), format!("run the package test script with {tool}"))
            } else if f.npm_script("build") {
                pair(format!("{tool} run build"), format!("run the package build script with {tool}"))
            } else {
                pair("node -e \"require('./')\"", "node loads the package entry point")
            };
            let mut tools = vec!["node"];
            tools.push(match tool {
                "yarn" => "yarn",
                "pnpm" => "pnpm",
                _ => "npm",
            });
            Recipe { install: vec![install], tools, verify, language: "JavaScript" }
        }
        "cargo" => Recipe {
            install: vec![pair("cargo build", "cargo build compiles the crate and fetches dependencies")],
            tools: vec!["cargo"],
            verify: pair("cargo test", "run the cargo test suite"),
            language: "Rust",
        },
        "go" => Recipe {
            install: vec![pair("go mod download", "go mod download fetches module dependencies")],
            tools: vec!["go"],
            verify: pair("go test ./...", "go test every package"),
            language: "Go",
        },
        "cmake" => Recipe {
            install: vec![
                pair("cmake -S . -B build", "cmake configures the build directory"),
                pair("cmake --build build", "cmake builds every target"),
            ],
            tools: vec!["cmake"],
            verify: pair("ctest --test-dir build --output-on-failure", "ctest runs the registered tests"),
            language: "C/C++",
        },
        "make" => {
            let targets = f.make_targets();
            let test_target = ["test", "check"].into_iter().find(|t| targets.iter().any(|x| x == t));
            let (install, verify) = match test_target {
                Some(t) => (
                    vec![pair("make", "make builds the default target")],
                    pair(format!("make {t}"), format!("make {t} runs the project checks")),
                ),
                None => (vec![], pair("make", "make builds the default target")),
            };
            Recipe { install, tools: vec!["make"], verify, language: "C/C++" }
        }
        _ => return None,
    };
    Some(r)
}

const NOTES: &[&str] = &[
    "Do not edit repository sources; only the commands in this contract change the environment.",
    "Commands run from the repository root unless their cwd names a subdirectory.",
    "minimal_verify gates acceptance; strongest_verify and run_probes are advisory.",
];

fn empty_repo_plan() -> BootstrapPlan {
    let mut plan = BootstrapPlan::new(CommandSpec::new("ls -la", "ls lists the empty checkout", Phase::MinimalVerify));
    plan.doctor_commands.push(CommandSpec::new("command -v sh", "command -v confirms sh exists", Phase::Doctor));
    plan.constraints_notes = NOTES.iter().map(|s| s.to_string()).collect();
    plan.agent_context = "The repository has no files to build or test.".into();
    plan
}

/// Plan for the highest-priority manager, or a listing-only plan when the
/// repository shows nothing to build.
pub(crate) fn rule_plan(discovery: &DiscoveryReport, ci: &CiEvidenceReport) -> BootstrapPlan {
    let chosen = PRIORITY.iter().find_map(|name| discovery.manager(name)).and_then(|m| {
        let facts = Facts { discovery, dir: dir_of(&m.trigger_file) };
        recipe(m, &facts).map(|r| (m, facts.dir, r))
    });
    let Some((manager, dir, recipe)) = chosen else {
        return empty_repo_plan();
    };
    let evidence = Provenance::File(manager.trigger_file.clone());
    let in_dir = |c: CommandSpec| if dir == "." { c } else { c.with_cwd(dir.clone()) };

    let (vcmd, vreason) = recipe.verify;
    let mut plan = BootstrapPlan::new(in_dir(
        CommandSpec::new(vcmd, vreason, Phase::MinimalVerify).with_provenance(evidence.clone()),
    ));
    let mut links = BTreeMap::new();
    for (i, (cmd, reason)) in recipe.install.into_iter().enumerate() {
        plan.install_commands
            .push(in_dir(CommandSpec::new(cmd, reason, Phase::Install).with_provenance(evidence.clone())));
        links.insert(format!("install/{i}"), vec![manager.trigger_file.clone()]);
    }
    for tool in &recipe.tools {
        plan.doctor_commands.push(CommandSpec::new(
            format!("command -v {tool}"),
            format!("command -v checks that {tool} is on PATH"),
            Phase::Doctor,
        ));
    }
    links.insert("minimal_verify/0".into(), vec![manager.trigger_file.clone()]);

    let minimal = plan.goals.minimal_verify.cmd.clone();
    let strongest = ci.candidate_commands.iter().find(|c| {
        is_test_like(&c.command)
            && c.command.trim() != minimal
            && !c.command.contains("${{")
            && !is_degenerate_cmd(&c.command)
    });
    if let Some(c) = strongest {
        let first_line = c.command.lines().next().unwrap_or("").trim();
        plan.goals.strongest_verify = Some(
            CommandSpec::new(c.command.trim(), format!("CI step {}: {first_line}", c.step), Phase::StrongestVerify)
                .with_provenance(Provenance::Ci { workflow: c.workflow.clone(), step: c.step.clone() }),
        );
        links.insert("strongest_verify/0".into(), vec![c.workflow.clone()]);
    }
    plan.evidence_links = links;

    plan.constraints_notes = NOTES.iter().map(|s| s.to_string()).collect();
    plan.constraints_notes.push(format!("Dependencies are managed by {} ({}).", manager.name, manager.trigger_file));
    let install = plan.install_commands.iter().map(|c| format!("`{}`", c.cmd)).collect::<Vec<_>>().join(", ");
    plan.agent_context = format!(
        "{} project managed by {} ({}). Install with {}; verify with `{}`.",
        recipe.language,
        manager.name,
        manager.trigger_file,
        if install.is_empty() { "nothing".to_string() } else { install },
        plan.goals.minimal_verify.cmd,
    );
    plan
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evidence::{CandidateCommand, EvidenceItem, EvidenceKind, StructureSummary};
    use crate::plan::{has_rejects, parse_plan_document, validate_plan, PlanContext};

    fn report(entries: &[&str], managers: &[(&str, &str)], items: &[(&str, &str)]) -> DiscoveryReport {
        DiscoveryReport {
            languages: vec![],
            package_managers: managers
                .iter()
                .map(|(n, t)| PackageManager { name: n.to_string(), trigger_file: t.to_string() })
                .collect(),
            important_files: vec![],
            structure_summary: StructureSummary {
                entries: entries.iter().map(|s| s.to_string()).collect(),
                files_examined: entries.len(),
                max_depth: 6,
                truncated: false,
            },
            evidence: items
                .iter()
                .map(|(p, s)| EvidenceItem {
                    file_path: p.to_string(),
                    kind: EvidenceKind::BuildConfig,
                    snippet: s.to_string(),
                    line_range: None,
                })
                .collect(),
        }
    }

    fn plan_for(d: &DiscoveryReport, ci: &CiEvidenceReport) -> BootstrapPlan {
        let req = super::super::build_plan_request(d, ci);
        let text = RulePlanner.complete(&req).unwrap().document;
        let plan = parse_plan_document(&text).unwrap();
        let v = validate_plan(&plan, &PlanContext::default());
        assert!(!has_rejects(&v), "{v:?}");
        plan
    }

    #[test]
    fn pip_with_tests() {
        let d = report(&["requirements.txt", "tests/", "tests/test_a.py"], &[("pip", "requirements.txt")], &[]);
        let p = plan_for(&d, &CiEvidenceReport::default());
        assert_eq!(p.install_commands[0].cmd, "python3 -m pip install -r requirements.txt");
        assert_eq!(p.goals.minimal_verify.cmd, "python3 -m pytest -q");
        assert_eq!(p.doctor_commands[0].cmd, "command -v python3");
        assert_eq!(p.goals.minimal_verify.provenance, Provenance::File("requirements.txt".into()));
    }

    #[test]
    fn make_without_test_target_builds_in_verify() {
        let d = report(&["Makefile", "main.c"], &[("make", "Makefile")], &[("Makefile", "all:\n\tcc main.c\n")]);
        let p = plan_for(&d, &CiEvidenceReport::default());
        assert!(p.install_commands.is_empty());
        assert_eq!(p.goals.minimal_verify.cmd, "make");
        let d =
            report(&["Makefile"], &[("make", "Makefile")], &[("Makefile", "all:\n\tcc x.c\ntest: all\n\t./a.out\n")]);
        assert_eq!(plan_for(&d, &CiEvidenceReport::default()).goals.minimal_verify.cmd, "make test");
    }

    #[test]
    fn subdirectory_manifest_sets_cwd() {
        let d = report(&["app/", "app/go.mod"], &[("go", "app/go.mod")], &[]);
        let p = plan_for(&d, &CiEvidenceReport::default());
        assert_eq!(p.goals.minimal_verify.cwd, "app");
        assert_eq!(p.install_commands[0].cwd, "app");
    }

    #[test]
    fn strongest_comes_from_ci() {
        let d = report(&["Cargo.toml"], &[("cargo", "Cargo.toml")], &[]);
        let ci = CiEvidenceReport {
            workflow_files: vec![".github/workflows/ci.yml".into()],
            candidate_commands: vec![
                CandidateCommand {
                    command: "cargo test".into(),
                    workflow: ".github/workflows/ci.yml".into(),
                    step: "t/0".into(),
                },
                CandidateCommand {
                    command: "cargo test --all-features".into(),
                    workflow: ".github/workflows/ci.yml".into(),
                    step: "t/1".into(),
                },
            ],
            non_local_features: vec![],
        };
        let p = plan_for(&d, &ci);
        let s = p.goals.strongest_verify.unwrap();
        assert_eq!(s.cmd, "cargo test --all-features");
        assert!(matches!(s.provenance, Provenance::Ci { .. }));
    }

    #[test]
    fn empty_repository() {
        let d = report(&[], &[], &[]);
        let text = RulePlanner.complete(&super::super::build_plan_request(&d, &CiEvidenceReport::default())).unwrap();
        let p = parse_plan_document(&text.document).unwrap();
        assert_eq!(p.goals.minimal_verify.cmd, "ls -la");
        assert!(!has_rejects(&validate_plan(&p, &PlanContext { repo_nonempty: false })));
    }
}
