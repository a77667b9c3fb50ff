//! Deterministic repairer: one fixed edit per failure category, or an empty
//! delta when the category has no mechanical fix.

use std::path::Path;

use serde::Deserialize;

use super::request::{PLAN_LABEL, PLAYBOOK_LABEL, VERIFIER_LABEL};
use super::{Backend, BackendRequest, Completion, CompletionError, RequestKind};
use crate::contract::FailurePlaybook;
use crate::json::to_stable_string;
use crate::plan::{BootstrapPlan, CommandDoc, CommandLocator, Phase};
use crate::repair::{Edit, FailureCategory, FailureSignature, Field, RepairDelta};
use crate::shell::{basename, program_words, quote};
use crate::verifier::Stage;

#[derive(Debug, Clone, Copy, Default)]
pub struct RuleRepairer;

#[derive(Deserialize)]
struct VerifierDoc {
    signature: Option<FailureSignature>,
}

impl Backend for RuleRepairer {
    fn name(&self) -> String {
        "rule-repairer".into()
    }

    fn complete(&self, request: &BackendRequest) -> Result<Completion, CompletionError> {
        if request.kind != RequestKind::Repair {
            return Err(CompletionError::Fatal("rule repairer only answers repair requests".into()));
        }
        let doc = |label| {
            request.document(label).ok_or_else(|| CompletionError::Fatal(format!("repair request without {label}")))
        };
        let plan: BootstrapPlan =
            serde_json::from_str(doc(PLAN_LABEL)?).map_err(|e| CompletionError::Fatal(e.to_string()))?;
        let verifier: VerifierDoc =
            serde_json::from_str(doc(VERIFIER_LABEL)?).map_err(|e| CompletionError::Fatal(e.to_string()))?;
        let playbook: FailurePlaybook =
            request.document(PLAYBOOK_LABEL).and_then(|d| serde_json::from_str(d).ok()).unwrap_or_default();
        let delta = match verifier.signature {
            Some(sig) => rule_delta(&plan, &sig, &playbook),
            None => RepairDelta::new(vec![], "nothing failed"),
        };
        Ok(Completion::text(to_stable_string(&delta)))
    }
}

fn phase_of(stage: Stage) -> Option<Phase> {
    match stage {
        Stage::Setup => Some(Phase::Install),
        Stage::Doctor => Some(Phase::Doctor),
        Stage::Minimal => Some(Phase::MinimalVerify),
        Stage::Strongest => Some(Phase::StrongestVerify),
        Stage::Probe => Some(Phase::RunProbes),
    }
}

fn locator(sig: &FailureSignature) -> Option<CommandLocator> {
    Some(CommandLocator::new(phase_of(sig.stage)?, sig.command_index.unwrap_or(0)))
}

fn give_up(sig: &FailureSignature, why: &str) -> RepairDelta {
    RepairDelta::new(vec![], format!("{}: {why}", sig.category.as_str()))
}

/// Module name -> distribution name where the two differ.
const PY_PACKAGES: &[(&str, &str)] = &[
    ("yaml", "pyyaml"),
    ("PIL", "pillow"),
    ("cv2", "opencv-python"),
    ("sklearn", "scikit-learn"),
    ("bs4", "beautifulsoup4"),
    ("dateutil", "python-dateutil"),
    ("dotenv", "python-dotenv"),
    ("jwt", "pyjwt"),
    ("attr", "attrs"),
    ("serial", "pyserial"),
    ("Crypto", "pycryptodome"),
    ("git", "gitpython"),
    ("docx", "python-docx"),
    ("magic", "python-magic"),
];

/// Tool -> command that provides it.
const TOOL_INSTALLS: &[(&str, &str)] = &[
    ("pytest", "python3 -m pip install pytest"),
    ("py.test", "python3 -m pip install pytest"),
    ("tox", "python3 -m pip install tox"),
    ("nox", "python3 -m pip install nox"),
    ("black", "python3 -m pip install black"),
    ("flake8", "python3 -m pip install flake8"),
    ("ruff", "python3 -m pip install ruff"),
    ("mypy", "python3 -m pip install mypy"),
    ("pylint", "python3 -m pip install pylint"),
    ("poetry", "python3 -m pip install poetry"),
    ("pipenv", "python3 -m pip install pipenv"),
    ("uv", "python3 -m pip install uv"),
    ("pre-commit", "python3 -m pip install pre-commit"),
    ("pip", "python3 -m ensurepip --upgrade"),
    ("pip3", "python3 -m ensurepip --upgrade"),
    ("yarn", "npm install -g yarn"),
    ("pnpm", "npm install -g pnpm"),
    ("tsc", "npm install -g typescript"),
    ("eslint", "npm install -g eslint"),
    ("prettier", "npm install -g prettier"),
    ("go", "apt-get update && apt-get install -y golang-go"),
    ("node", "apt-get update && apt-get install -y nodejs npm"),
    ("npm", "apt-get update && apt-get install -y nodejs npm"),
    ("npx", "apt-get update && apt-get install -y nodejs npm"),
    ("gcc", "apt-get update && apt-get install -y build-essential"),
    ("cc", "apt-get update && apt-get install -y build-essential"),
    ("g++", "apt-get update && apt-get install -y build-essential"),
    ("c++", "apt-get update && apt-get install -y build-essential"),
    ("make", "apt-get update && apt-get install -y build-essential"),
    ("cmake", "apt-get update && apt-get install -y cmake"),
    ("ctest", "apt-get update && apt-get install -y cmake"),
    ("python", "apt-get update && apt-get install -y python-is-python3"),
    ("python3", "apt-get update && apt-get install -y python3 python3-pip"),
    ("java", "apt-get update && apt-get install -y default-jdk"),
    ("javac", "apt-get update && apt-get install -y default-jdk"),
    ("mvn", "apt-get update && apt-get install -y maven"),
    ("ruby", "apt-get update && apt-get install -y ruby-full"),
    ("bundle", "apt-get update && apt-get install -y ruby-bundler"),
];

fn install_text(plan: &BootstrapPlan) -> String {
    plan.install_commands.iter().map(|c| c.cmd.as_str()).collect::<Vec<_>>().join("\n")
}

fn uses(text: &str, program: &str) -> bool {
    text.lines().any(|l| program_words(l).first().is_some_and(|w| basename(w) == program))
}

/// Command adding one dependency with the manager the plan already uses.
fn dependency_install(plan: &BootstrapPlan, sig: &FailureSignature) -> Option<(String, String)> {
    let subject = sig.subject.as_deref()?;
    let text = install_text(plan);
    let matched = sig.matched_text.as_str();
    if matched.contains("No module named") || matched.contains("cannot import name") {
        let module = subject.split('.').next().unwrap_or(subject);
        let dist = PY_PACKAGES.iter().find(|(m, _)| *m == module).map(|(_, d)| *d).unwrap_or(module);
        let cmd = if uses(&text, "poetry") {
            format!("poetry add {}", quote(dist))
        } else if uses(&text, "pipenv") {
            format!("pipenv install {}", quote(dist))
        } else if uses(&text, "uv") {
            format!("uv add {}", quote(dist))
        } else {
            format!("python3 -m pip install {}", quote(dist))
        };
        return Some((cmd, dist.to_string()));
    }
    if matched.contains("Cannot find module") || matched.contains("Cannot find package") {
        if subject.starts_with('.') || subject.starts_with('/') {
            return None;
        }
        let mut parts = subject.split('/');
        let pkg = match (parts.next(), parts.next()) {
            (Some(scope), Some(name)) if scope.starts_with('@') => format!("{scope}/{name}"),
            (Some(name), _) => name.to_string(),
            _ => return None,
        };
        let cmd = if uses(&text, "yarn") {
            format!("yarn add {}", quote(&pkg))
        } else if uses(&text, "pnpm") {
            format!("pnpm add {}", quote(&pkg))
        } else {
            format!("npm install {}", quote(&pkg))
        };
        return Some((cmd, pkg));
    }
    if matched.contains("required module provides package") || matched.contains("cannot find package \"") {
        return Some((format!("go get {}", quote(subject)), subject.to_string()));
    }
    if matched.contains("can't find crate") || matched.contains("unresolved import") {
        let krate = subject.split("::").next().unwrap_or(subject);
        if matches!(krate, "crate" | "self" | "super" | "std" | "core" | "alloc") {
            return None;
        }
        return Some((format!("cargo add {}", quote(krate)), krate.to_string()));
    }
    None
}

/// Manifest files whose directory a program must run in.
fn manifests_for(program: &str) -> &'static [&'static str] {
    match program {
        "make" => &["Makefile", "makefile", "GNUmakefile"],
        "cargo" => &["Cargo.toml"],
        "go" => &["go.mod"],
        "npm" | "yarn" | "pnpm" | "node" | "npx" => &["package.json"],
        "cmake" | "ctest" => &["CMakeLists.txt"],
        "python" | "python3" | "pytest" | "pip" | "poetry" | "pipenv" | "uv" => {
            &["pyproject.toml", "setup.py", "requirements.txt", "manage.py", "pytest.ini", "setup.cfg"]
        }
        _ => &[],
    }
}

fn cwd_fix(plan: &BootstrapPlan, sig: &FailureSignature) -> Option<RepairDelta> {
    let loc = locator(sig)?;
    let cmd = plan.command(loc)?;
    let program = program_words(&cmd.cmd).first().map(|w| basename(w).to_string()).unwrap_or_default();
    let mut known: Vec<String> = plan.evidence_links.values().flatten().cloned().collect();
    known.extend(plan.all_commands().filter_map(|(_, c)| c.provenance.file_path().map(str::to_string)));
    let wanted_file = sig.subject.as_deref().map(|s| s.rsplit('/').next().unwrap_or(s).to_string());
    let hit = known.iter().find(|path| {
        let name = path.rsplit('/').next().unwrap_or(path);
        manifests_for(&program).contains(&name) || wanted_file.as_deref() == Some(name)
    })?;
    let dir = match Path::new(hit).parent().map(|p| p.to_string_lossy().into_owned()) {
        Some(d) if !d.is_empty() => d,
        _ => ".".into(),
    };
    if dir == cmd.cwd {
        return None;
    }
    Some(RepairDelta::new(
        vec![Edit::UpdateField { field: Field::Cwd, target: Some(loc), value: serde_json::Value::String(dir.clone()) }],
        format!("wrong_cwd: run `{}` in {dir}, next to {hit}", cmd.cmd),
    ))
}

pub(crate) fn rule_delta(plan: &BootstrapPlan, sig: &FailureSignature, playbook: &FailurePlaybook) -> RepairDelta {
    match sig.category {
        FailureCategory::MissingDependency => {
            let Some((cmd, pkg)) = dependency_install(plan, sig) else {
                return give_up(sig, "no package manager can provide it");
            };
            if plan.install_commands.iter().any(|c| c.cmd == cmd) {
                return give_up(sig, "installing it did not help before");
            }
            let doc = CommandDoc {
                cmd,
                reason: format!("install missing dependency {pkg}"),
                cwd: plan.install_commands.last().map(|c| c.cwd.clone()),
                timeout_s: None,
                provenance: None,
            };
            RepairDelta::new(
                vec![Edit::InsertCommands {
                    stage: Phase::Install,
                    index: plan.install_commands.len(),
                    commands: vec![doc],
                }],
                format!("missing_dependency: add {pkg} to the install stage"),
            )
        }
        FailureCategory::MissingToolchain | FailureCategory::CommandNotFound => {
            let Some(tool) = sig.subject.as_deref() else { return give_up(sig, "no program named") };
            let Some((_, install)) = TOOL_INSTALLS.iter().find(|(t, _)| *t == tool) else {
                return give_up(sig, &format!("no known installer for `{tool}`"));
            };
            if plan.install_commands.iter().any(|c| c.cmd == *install) {
                return give_up(sig, &format!("`{install}` already ran"));
            }
            let doc = CommandDoc {
                cmd: install.to_string(),
                reason: format!("install {tool} before it is used"),
                cwd: None,
                timeout_s: None,
                provenance: None,
            };
            RepairDelta::new(
                vec![Edit::InsertCommands { stage: Phase::Install, index: 0, commands: vec![doc] }],
                format!("{}: provide {tool}", sig.category.as_str()),
            )
        }
        FailureCategory::WrongCwd => {
            cwd_fix(plan, sig).unwrap_or_else(|| give_up(sig, "no manifest locates the command"))
        }
        FailureCategory::Network => {
            let summary = sig.summary();
            if playbook.entries.iter().any(|e| e.signature == summary) {
                return give_up(sig, "the failure persisted after a retry");
            }
            let Some(loc) = locator(sig) else { return give_up(sig, "no command to retry") };
            let Some(cmd) = plan.command(loc) else { return give_up(sig, "no command to retry") };
            RepairDelta::new(
                vec![Edit::ReplaceCommands { stage: loc.phase, index: loc.index, command: CommandDoc::from(cmd) }],
                "network: retry the command once",
            )
        }
        _ => give_up(sig, "no mechanical fix"),
    }
}
