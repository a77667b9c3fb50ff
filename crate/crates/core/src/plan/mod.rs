//! The bootstrap plan: phased commands, verification goals and the evidence
//! behind each decision, plus the deterministic constraint validator.

mod generate;
mod patterns;
mod validate;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use generate::{generate_plan, parse_plan_document, CommandDoc, GeneratedPlan, PlanError};
pub use patterns::{
    classify_verify, detect_degenerate_verify, is_degenerate_cmd, is_import_check, is_mutating, is_test_like, RiskKind,
    VerifyClass,
};
pub use validate::{
    has_rejects, screen_risky_commands, validate_plan, ConstraintViolation, PlanContext, SafetyWarning, Severity,
    WarningKind, RULE_TABLE,
};

pub const DEFAULT_INSTALL_TIMEOUT_S: u64 = 3600;
pub const DEFAULT_DOCTOR_TIMEOUT_S: u64 = 120;
pub const DEFAULT_MINIMAL_TIMEOUT_S: u64 = 300;
pub const DEFAULT_STRONGEST_TIMEOUT_S: u64 = 1200;
pub const DEFAULT_PROBE_TIMEOUT_S: u64 = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Install,
    Doctor,
    MinimalVerify,
    StrongestVerify,
    RunProbes,
}

impl Phase {
    pub const ALL: [Phase; 5] =
        [Phase::Install, Phase::Doctor, Phase::MinimalVerify, Phase::StrongestVerify, Phase::RunProbes];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Install => "install",
            Phase::Doctor => "doctor",
            Phase::MinimalVerify => "minimal_verify",
            Phase::StrongestVerify => "strongest_verify",
            Phase::RunProbes => "run_probes",
        }
    }

    pub fn default_timeout_s(self) -> u64 {
        match self {
            Phase::Install => DEFAULT_INSTALL_TIMEOUT_S,
            Phase::Doctor => DEFAULT_DOCTOR_TIMEOUT_S,
            Phase::MinimalVerify => DEFAULT_MINIMAL_TIMEOUT_S,
            Phase::StrongestVerify => DEFAULT_STRONGEST_TIMEOUT_S,
            Phase::RunProbes => DEFAULT_PROBE_TIMEOUT_S,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Phase {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Phase::ALL.into_iter().find(|p| p.as_str() == s).ok_or_else(|| format!("unknown phase `{s}`"))
    }
}

/// `<phase>/<index>`, e.g. `install/2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CommandLocator {
    pub phase: Phase,
    pub index: usize,
}

impl CommandLocator {
    pub fn new(phase: Phase, index: usize) -> Self {
        Self { phase, index }
    }
}

impl fmt::Display for CommandLocator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.phase, self.index)
    }
}

impl FromStr for CommandLocator {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (phase, index) = s.split_once('/').ok_or_else(|| format!("bad locator `{s}`"))?;
        Ok(Self { phase: phase.parse()?, index: index.parse().map_err(|_| format!("bad locator index in `{s}`"))? })
    }
}

impl Serialize for CommandLocator {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CommandLocator {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Where a command came from. Serialized as a single string:
/// `backend-inferred`, `file:<path>` or `ci:<workflow>#<job/step>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub enum Provenance {
    #[default]
    BackendInferred,
    File(String),
    Ci {
        workflow: String,
        step: String,
    },
}

impl Provenance {
    pub fn is_evidence(&self) -> bool {
        !matches!(self, Provenance::BackendInferred)
    }

    pub fn file_path(&self) -> Option<&str> {
        match self {
            Provenance::File(p) => Some(p),
            Provenance::Ci { workflow, .. } => Some(workflow),
            Provenance::BackendInferred => None,
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::BackendInferred => f.write_str("backend-inferred"),
            Provenance::File(p) => write!(f, "file:{p}"),
            Provenance::Ci { workflow, step } => write!(f, "ci:{workflow}#{step}"),
        }
    }
}

impl FromStr for Provenance {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "backend-inferred" {
            return Ok(Provenance::BackendInferred);
        }
        if let Some(p) = s.strip_prefix("file:") {
            return Ok(Provenance::File(p.to_string()));
        }
        if let Some(rest) = s.strip_prefix("ci:") {
            let (workflow, step) = rest.split_once('#').unwrap_or((rest, ""));
            return Ok(Provenance::Ci { workflow: workflow.to_string(), step: step.to_string() });
        }
        // A bare path is accepted as file evidence.
        if !s.is_empty() {
            return Ok(Provenance::File(s.to_string()));
        }
        Err("empty provenance".to_string())
    }
}

impl Serialize for Provenance {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Provenance {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CommandSpec {
    pub cmd: String,
    pub cwd: String,
    pub timeout_s: u64,
    pub reason: String,
    pub provenance: Provenance,
}

impl CommandSpec {
    pub fn new(cmd: impl Into<String>, reason: impl Into<String>, phase: Phase) -> Self {
        Self {
            cmd: cmd.into(),
            cwd: ".".into(),
            timeout_s: phase.default_timeout_s(),
            reason: reason.into(),
            provenance: Provenance::BackendInferred,
        }
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn with_cwd(mut self, cwd: impl Into<String>) -> Self {
        self.cwd = cwd.into();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationGoals {
    pub minimal_verify: CommandSpec,
    pub strongest_verify: Option<CommandSpec>,
    pub run_probes: Vec<CommandSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapPlan {
    pub install_commands: Vec<CommandSpec>,
    pub doctor_commands: Vec<CommandSpec>,
    #[serde(flatten)]
    pub goals: VerificationGoals,
    pub constraints_notes: Vec<String>,
    /// `<phase>/<index>` locator -> evidence file paths.
    pub evidence_links: BTreeMap<String, Vec<String>>,
    pub agent_context: String,
}

impl BootstrapPlan {
    pub fn new(minimal_verify: CommandSpec) -> Self {
        Self {
            install_commands: Vec::new(),
            doctor_commands: Vec::new(),
            goals: VerificationGoals { minimal_verify, strongest_verify: None, run_probes: Vec::new() },
            constraints_notes: Vec::new(),
            evidence_links: BTreeMap::new(),
            agent_context: String::new(),
        }
    }

    /// Commands of one phase in execution order.
    pub fn commands(&self, phase: Phase) -> &[CommandSpec] {
        match phase {
            Phase::Install => &self.install_commands,
            Phase::Doctor => &self.doctor_commands,
            Phase::MinimalVerify => std::slice::from_ref(&self.goals.minimal_verify),
            Phase::StrongestVerify => self.goals.strongest_verify.as_slice(),
            Phase::RunProbes => &self.goals.run_probes,
        }
    }

    pub fn command(&self, loc: CommandLocator) -> Option<&CommandSpec> {
        self.commands(loc.phase).get(loc.index)
    }

    pub fn command_mut(&mut self, loc: CommandLocator) -> Option<&mut CommandSpec> {
        match loc.phase {
            Phase::Install => self.install_commands.get_mut(loc.index),
            Phase::Doctor => self.doctor_commands.get_mut(loc.index),
            Phase::MinimalVerify => (loc.index == 0).then_some(&mut self.goals.minimal_verify),
            Phase::StrongestVerify => self.goals.strongest_verify.as_mut().filter(|_| loc.index == 0),
            Phase::RunProbes => self.goals.run_probes.get_mut(loc.index),
        }
    }

    /// Every command with its locator, in canonical phase order.
    pub fn all_commands(&self) -> impl Iterator<Item = (CommandLocator, &CommandSpec)> {
        Phase::ALL.into_iter().flat_map(move |phase| {
            self.commands(phase).iter().enumerate().map(move |(i, c)| (CommandLocator::new(phase, i), c))
        })
    }

    pub fn minimal_verify(&self) -> &CommandSpec {
        &self.goals.minimal_verify
    }

    pub fn strongest_verify(&self) -> Option<&CommandSpec> {
        self.goals.strongest_verify.as_ref()
    }

    /// Evidence references for a command: explicit links plus its own
    /// provenance file, deduplicated in order.
    pub fn evidence_for(&self, loc: CommandLocator) -> Vec<String> {
        let mut refs: Vec<String> = self.evidence_links.get(&loc.to_string()).cloned().unwrap_or_default();
        if let Some(p) = self.command(loc).and_then(|c| c.provenance.file_path()) {
            if !refs.iter().any(|r| r == p) {
                refs.push(p.to_string());
            }
        }
        refs
    }
}
