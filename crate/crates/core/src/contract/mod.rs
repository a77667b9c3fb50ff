//! The on-disk `.bootstrap` directory: materialization, loading, freezing
//! and structural diffs.

mod diff;
mod playbook;
mod render;

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use diff::{diff_contract, diff_plans, ContractDiff, DiffEntry};
pub use playbook::{record_repair_knowledge, FailurePlaybook, PlaybookEntry, RepairOutcome, MAX_PLAYBOOK_ENTRIES};
pub use render::{
    parse_agent_context, parse_script_commands, render_agent_context, render_stage_script, render_stage_script_from,
    render_verify_script, MARKER_PREFIX,
};

use crate::json::to_stable_string;
use crate::plan::{
    has_rejects, validate_plan, BootstrapPlan, CommandSpec, ConstraintViolation, PlanContext, SafetyWarning,
    VerificationGoals,
};
use crate::verifier::Stage;

pub const CONTRACT_DIR: &str = ".bootstrap";
pub const SETUP_SCRIPT: &str = "setup.sh";
pub const DOCTOR_SCRIPT: &str = "doctor.sh";
pub const VERIFY_SCRIPT: &str = "verify.sh";
pub const MANIFEST_FILE: &str = "commands.json";
pub const EVIDENCE_MAP_FILE: &str = "evidence_map.json";
pub const AGENT_CONTEXT_FILE: &str = "agent_context.md";
pub const PLAYBOOK_FILE: &str = "failure_playbook.json";
pub const WARNINGS_FILE: &str = "safety_warnings.json";

/// Every file of a contract, in sorted order.
pub const CONTRACT_FILES: [&str; 8] = [
    AGENT_CONTEXT_FILE,
    MANIFEST_FILE,
    DOCTOR_SCRIPT,
    EVIDENCE_MAP_FILE,
    PLAYBOOK_FILE,
    WARNINGS_FILE,
    SETUP_SCRIPT,
    VERIFY_SCRIPT,
];

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandsManifest {
    pub schema_version: u32,
    pub install: Vec<CommandSpec>,
    pub doctor: Vec<CommandSpec>,
    pub minimal_verify: CommandSpec,
    pub strongest_verify: Option<CommandSpec>,
    pub run_probes: Vec<CommandSpec>,
}

impl CommandsManifest {
    pub fn from_plan(plan: &BootstrapPlan) -> Self {
        Self {
            schema_version: MANIFEST_SCHEMA_VERSION,
            install: plan.install_commands.clone(),
            doctor: plan.doctor_commands.clone(),
            minimal_verify: plan.goals.minimal_verify.clone(),
            strongest_verify: plan.goals.strongest_verify.clone(),
            run_probes: plan.goals.run_probes.clone(),
        }
    }

    /// True when the manifest lists exactly the plan's commands.
    pub fn matches(&self, plan: &BootstrapPlan) -> bool {
        *self == Self::from_plan(plan)
    }

    /// Total commands across all stages.
    pub fn command_count(&self) -> usize {
        self.install.len() + self.doctor.len() + 1 + self.strongest_verify.is_some() as usize + self.run_probes.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BootstrapContract {
    pub root: PathBuf,
    pub plan: BootstrapPlan,
    pub manifest: CommandsManifest,
    /// `<phase>/<index>` -> evidence file paths.
    pub evidence_map: BTreeMap<String, Vec<String>>,
    pub failure_playbook: FailurePlaybook,
    pub safety_warnings: Vec<SafetyWarning>,
    pub agent_context: String,
}

impl BootstrapContract {
    /// Script text for a stage as stored in the contract directory.
    pub fn script(&self, name: &str) -> io::Result<String> {
        fs::read_to_string(self.root.join(name))
    }
}

#[derive(Debug, Error)]
pub enum ContractError {
    #[error("output directory {path} is not writable: {reason}")]
    OutputDirNotWritable { path: PathBuf, reason: String },
    #[error("plan has reject-severity violations: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    PlanRejected(Vec<ConstraintViolation>),
    #[error("contract file {0} is missing")]
    MissingFile(String),
    #[error("malformed commands.json: {0}")]
    MalformedManifest(String),
    #[error("malformed {name}: {reason}")]
    MalformedFile { name: String, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

/// Writes all eight contract files into `outdir` (the `.bootstrap`
/// directory itself). Nothing is written when the plan has reject-severity
/// violations.
pub fn materialize_contract(
    plan: &BootstrapPlan,
    warnings: &[SafetyWarning],
    playbook: &FailurePlaybook,
    outdir: &Path,
) -> Result<BootstrapContract, ContractError> {
    let violations = validate_plan(plan, &PlanContext::default());
    if has_rejects(&violations) {
        return Err(ContractError::PlanRejected(
            violations.into_iter().filter(|v| v.severity == crate::plan::Severity::Reject).collect(),
        ));
    }
    let not_writable =
        |e: io::Error| ContractError::OutputDirNotWritable { path: outdir.to_path_buf(), reason: e.to_string() };
    fs::create_dir_all(outdir).map_err(not_writable)?;

    let manifest = CommandsManifest::from_plan(plan);
    let files: [(&str, String); 8] = [
        (SETUP_SCRIPT, render_stage_script(&plan.install_commands, Stage::Setup)),
        (DOCTOR_SCRIPT, render_stage_script(&plan.doctor_commands, Stage::Doctor)),
        (VERIFY_SCRIPT, render_verify_script(plan)),
        (MANIFEST_FILE, to_stable_string(&manifest)),
        (EVIDENCE_MAP_FILE, to_stable_string(&plan.evidence_links)),
        (AGENT_CONTEXT_FILE, render_agent_context(plan)),
        (PLAYBOOK_FILE, to_stable_string(playbook)),
        (WARNINGS_FILE, to_stable_string(warnings)),
    ];
    for (name, body) in &files {
        let path = outdir.join(name);
        fs::write(&path, body).map_err(not_writable)?;
        if name.ends_with(".sh") {
            fs::set_permissions(&path, fs::Permissions::from_mode(0o755)).map_err(not_writable)?;
        }
    }
    Ok(BootstrapContract {
        root: outdir.to_path_buf(),
        plan: plan.clone(),
        manifest,
        evidence_map: plan.evidence_links.clone(),
        failure_playbook: playbook.clone(),
        safety_warnings: warnings.to_vec(),
        agent_context: plan.agent_context.clone(),
    })
}

fn read_required(dir: &Path, name: &str) -> Result<String, ContractError> {
    let path = dir.join(name);
    match fs::read_to_string(&path) {
        Ok(t) => Ok(t),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Err(ContractError::MissingFile(name.to_string())),
        Err(source) => Err(ContractError::Io { path, source }),
    }
}

fn parse_json<T: serde::de::DeserializeOwned>(name: &str, text: &str) -> Result<T, ContractError> {
    serde_json::from_str(text)
        .map_err(|e| ContractError::MalformedFile { name: name.to_string(), reason: e.to_string() })
}

/// Reads a contract directory back, reporting the first missing or
/// malformed file by name.
pub fn load_contract(dir: &Path) -> Result<BootstrapContract, ContractError> {
    let mut texts = BTreeMap::new();
    for name in CONTRACT_FILES {
        texts.insert(name, read_required(dir, name)?);
    }
    let manifest_value: serde_json::Value =
        serde_json::from_str(&texts[MANIFEST_FILE]).map_err(|e| ContractError::MalformedManifest(e.to_string()))?;
    match manifest_value.get("schema_version").and_then(serde_json::Value::as_u64) {
        Some(v) if v == MANIFEST_SCHEMA_VERSION as u64 => {}
        Some(v) => return Err(ContractError::MalformedManifest(format!("unsupported schema_version {v}"))),
        None => return Err(ContractError::MalformedManifest("schema_version missing".into())),
    }
    let manifest: CommandsManifest =
        serde_json::from_value(manifest_value).map_err(|e| ContractError::MalformedManifest(e.to_string()))?;
    let evidence_map: BTreeMap<String, Vec<String>> = parse_json(EVIDENCE_MAP_FILE, &texts[EVIDENCE_MAP_FILE])?;
    let failure_playbook: FailurePlaybook = parse_json(PLAYBOOK_FILE, &texts[PLAYBOOK_FILE])?;
    let safety_warnings: Vec<SafetyWarning> = parse_json(WARNINGS_FILE, &texts[WARNINGS_FILE])?;
    let (agent_context, constraints_notes) =
        parse_agent_context(&texts[AGENT_CONTEXT_FILE]).ok_or_else(|| ContractError::MalformedFile {
            name: AGENT_CONTEXT_FILE.into(),
            reason: "missing context or constraints section".into(),
        })?;

    let plan = BootstrapPlan {
        install_commands: manifest.install.clone(),
        doctor_commands: manifest.doctor.clone(),
        goals: VerificationGoals {
            minimal_verify: manifest.minimal_verify.clone(),
            strongest_verify: manifest.strongest_verify.clone(),
            run_probes: manifest.run_probes.clone(),
        },
        constraints_notes,
        evidence_links: evidence_map.clone(),
        agent_context: agent_context.clone(),
    };
    Ok(BootstrapContract {
        root: dir.to_path_buf(),
        plan,
        manifest,
        evidence_map,
        failure_playbook,
        safety_warnings,
        agent_context,
    })
}

/// SHA-256 over the eight contract files in name order, each framed by its
/// name and byte length.
pub fn contract_hash(dir: &Path) -> Result<String, ContractError> {
    let mut h = Sha256::new();
    for name in CONTRACT_FILES {
        let path = dir.join(name);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(ContractError::MissingFile(name.into())),
            Err(source) => return Err(ContractError::Io { path, source }),
        };
        h.update(name.as_bytes());
        h.update([0u8]);
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrozenContract {
    pub contract: BootstrapContract,
    pub content_hash: String,
    pub frozen_at: DateTime<Utc>,
}

impl FrozenContract {
    /// Recomputes the digest from disk and compares.
    pub fn is_intact(&self) -> bool {
        contract_hash(&self.contract.root).map(|h| h == self.content_hash).unwrap_or(false)
    }
}

pub fn freeze_contract(contract: &BootstrapContract) -> Result<FrozenContract, ContractError> {
    Ok(FrozenContract {
        contract: contract.clone(),
        content_hash: contract_hash(&contract.root)?,
        frozen_at: Utc::now(),
    })
}

/// Serializable pointer to a frozen contract, used in reports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrozenContractRef {
    pub path: String,
    pub content_hash: String,
    pub frozen_at: DateTime<Utc>,
}

impl From<&FrozenContract> for FrozenContractRef {
    fn from(f: &FrozenContract) -> Self {
        Self {
            path: f.contract.root.display().to_string(),
            content_hash: f.content_hash.clone(),
            frozen_at: f.frozen_at,
        }
    }
}

/// Copies a contract directory's eight files to `dest`.
pub fn copy_contract(contract: &BootstrapContract, dest: &Path) -> Result<(), ContractError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ContractError::Io { path, source }
    };
    fs::create_dir_all(dest).map_err(io_err(dest))?;
    for name in CONTRACT_FILES {
        let to = dest.join(name);
        fs::copy(contract.root.join(name), &to).map_err(io_err(&to))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::{Phase, Provenance};

    fn sample_plan() -> BootstrapPlan {
        let mut p = BootstrapPlan::new(
            CommandSpec::new("python3 -m pytest -q", "run the pytest suite", Phase::MinimalVerify)
                .with_provenance(Provenance::File("requirements.txt".into())),
        );
        p.install_commands.push(
            CommandSpec::new("python3 -m pip install -r requirements.txt", "install requirements", Phase::Install)
                .with_provenance(Provenance::File("requirements.txt".into())),
        );
        p.evidence_links.insert("install/0".into(), vec!["requirements.txt".into()]);
        p.constraints_notes.push("Do not modify source files.".into());
        p.agent_context = "Python project.".into();
        p
    }

    #[test]
    fn materialize_load_round_trip() {
        let d = tempfile::tempdir().unwrap();
        let out = d.path().join(CONTRACT_DIR);
        let plan = sample_plan();
        let c = materialize_contract(&plan, &[], &FailurePlaybook::default(), &out).unwrap();
        let mut names: Vec<String> =
            fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
        names.sort();
        assert_eq!(names, CONTRACT_FILES);
        let loaded = load_contract(&out).unwrap();
        assert_eq!(loaded.plan, plan);
        assert_eq!(loaded, c);
        let mode = fs::metadata(out.join(SETUP_SCRIPT)).unwrap().permissions().mode();
        assert_eq!(mode & 0o111, 0o111);
    }

    #[test]
    fn rejected_plan_writes_nothing() {
        let d = tempfile::tempdir().unwrap();
        let out = d.path().join(CONTRACT_DIR);
        let mut plan = sample_plan();
        plan.goals.minimal_verify.cmd = "python3 --version".into();
        assert!(matches!(
            materialize_contract(&plan, &[], &FailurePlaybook::default(), &out),
            Err(ContractError::PlanRejected(_))
        ));
        assert!(!out.exists());
    }

    #[test]
    fn missing_and_malformed_files() {
        let d = tempfile::tempdir().unwrap();
        let out = d.path().join(CONTRACT_DIR);
        materialize_contract(&sample_plan(), &[], &FailurePlaybook::default(), &out).unwrap();
        let manifest = fs::read_to_string(out.join(MANIFEST_FILE)).unwrap();
        fs::write(out.join(MANIFEST_FILE), manifest.replace("\"schema_version\": 1", "\"schema_version\": 2")).unwrap();
        assert!(matches!(load_contract(&out), Err(ContractError::MalformedManifest(_))));
        fs::remove_file(out.join(MANIFEST_FILE)).unwrap();
        match load_contract(&out) {
            Err(ContractError::MissingFile(n)) => assert_eq!(n, "commands.json"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn freeze_detects_byte_changes() {
        let d = tempfile::tempdir().unwrap();
        let out = d.path().join(CONTRACT_DIR);
        let c = materialize_contract(&sample_plan(), &[], &FailurePlaybook::default(), &out).unwrap();
        let f = freeze_contract(&c).unwrap();
        assert!(f.is_intact());
        assert_eq!(freeze_contract(&c).unwrap().content_hash, f.content_hash);
        let mut bytes = fs::read(out.join(DOCTOR_SCRIPT)).unwrap();
        bytes.push(b' ');
        fs::write(out.join(DOCTOR_SCRIPT), bytes).unwrap();
        assert!(!f.is_intact());
    }

    #[test]
    fn script_commands_match_manifest() {
        let d = tempfile::tempdir().unwrap();
        let out = d.path().join(CONTRACT_DIR);
        let c = materialize_contract(&sample_plan(), &[], &FailurePlaybook::default(), &out).unwrap();
        let setup: Vec<String> =
            parse_script_commands(&c.script(SETUP_SCRIPT).unwrap()).into_iter().map(|x| x.1).collect();
        let want: Vec<String> = c.manifest.install.iter().map(|x| x.cmd.clone()).collect();
        assert_eq!(setup, want);
    }
}
