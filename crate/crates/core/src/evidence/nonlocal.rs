use regex::Regex;
use serde::{Deserialize, Serialize};

use super::ci::StepLocation;

const DEFAULT_TABLE: &str = include_str!("nonlocal_patterns.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonLocalKind {
    Secret,
    ServiceContainer,
    CloudService,
    SpecialHardware,
    LongRunningMatrix,
    ExternalDependency,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NonLocalFeature {
    pub kind: NonLocalKind,
    pub location: StepLocation,
    /// The text that triggered the classification.
    pub detail: String,
}

/// Job-level facts a step inherits.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepContext {
    pub location: StepLocation,
    pub runs_on: Vec<String>,
    pub services: Vec<String>,
    pub matrix_entries: usize,
    pub timeout_minutes: Option<f64>,
    pub job_actions: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct TableSource {
    secret_patterns: Vec<String>,
    cloud_action_prefixes: Vec<String>,
    cloud_command_patterns: Vec<String>,
    runner_label_patterns: Vec<String>,
    external_patterns: Vec<String>,
    max_matrix_entries: usize,
    max_timeout_minutes: u64,
}

/// Compiled non-local pattern table.
#[derive(Debug, Clone)]
pub struct NonLocalTable {
    secret: Vec<Regex>,
    cloud_actions: Vec<String>,
    cloud_commands: Vec<Regex>,
    runner_labels: Vec<Regex>,
    external: Vec<Regex>,
    max_matrix_entries: usize,
    max_timeout_minutes: u64,
}

impl Default for NonLocalTable {
    fn default() -> Self {
        Self::from_toml(DEFAULT_TABLE).expect("built-in table parses")
    }
}

impl NonLocalTable {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let src: TableSource = toml::from_str(text).map_err(|e| e.to_string())?;
        let compile = |v: &[String]| -> Result<Vec<Regex>, String> {
            v.iter().map(|p| Regex::new(p).map_err(|e| e.to_string())).collect()
        };
        Ok(Self {
            secret: compile(&src.secret_patterns)?,
            cloud_actions: src.cloud_action_prefixes,
            cloud_commands: compile(&src.cloud_command_patterns)?,
            runner_labels: compile(&src.runner_label_patterns)?,
            external: compile(&src.external_patterns)?,
            max_matrix_entries: src.max_matrix_entries,
            max_timeout_minutes: src.max_timeout_minutes,
        })
    }

    /// Features of one step. `step_text` is everything the step itself
    /// contributes (run body, env and with values); job-level facts come from
    /// the context. At most one feature per kind is returned.
    pub fn classify(&self, step_text: &str, ctx: &StepContext) -> Vec<NonLocalFeature> {
        let mut out = Vec::new();
        let mut add = |kind, detail: String| {
            out.push(NonLocalFeature { kind, location: ctx.location.clone(), detail });
        };
        if let Some(m) = first_match(&self.secret, step_text) {
            add(NonLocalKind::Secret, m);
        }
        if let Some(svc) = ctx.services.first() {
            add(NonLocalKind::ServiceContainer, format!("services: {svc}"));
        }
        if let Some(action) = ctx
            .job_actions
            .iter()
            .find(|a| self.cloud_actions.iter().any(|p| a.to_ascii_lowercase().starts_with(&p.to_ascii_lowercase())))
        {
            add(NonLocalKind::CloudService, format!("uses: {action}"));
        } else if let Some(m) = first_match(&self.cloud_commands, step_text) {
            add(NonLocalKind::CloudService, m.trim().to_string());
        }
        if let Some(label) = ctx.runs_on.iter().find(|l| self.runner_labels.iter().any(|r| r.is_match(l))) {
            add(NonLocalKind::SpecialHardware, format!("runs-on: {label}"));
        }
        if ctx.matrix_entries > self.max_matrix_entries {
            add(NonLocalKind::LongRunningMatrix, format!("matrix entries: {}", ctx.matrix_entries));
        } else if let Some(t) = ctx.timeout_minutes.filter(|t| *t > self.max_timeout_minutes as f64) {
            add(NonLocalKind::LongRunningMatrix, format!("timeout-minutes: {t}"));
        }
        if let Some(m) = first_match(&self.external, step_text) {
            add(NonLocalKind::ExternalDependency, m);
        }
        out
    }
}

fn first_match(patterns: &[Regex], text: &str) -> Option<String> {
    patterns.iter().find_map(|r| r.find(text).map(|m| m.as_str().to_string()))
}

/// Classifies a step with the built-in table.
pub fn classify_non_local(step_text: &str, ctx: &StepContext) -> Vec<NonLocalFeature> {
    NonLocalTable::default().classify(step_text, ctx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(v: &[NonLocalFeature]) -> Vec<NonLocalKind> {
        v.iter().map(|f| f.kind).collect()
    }

    #[test]
    fn benign_step_has_no_features() {
        assert!(classify_non_local("echo hello", &StepContext::default()).is_empty());
    }

    #[test]
    fn services_block_marks_service_container() {
        let ctx = StepContext { services: vec!["postgres".into()], ..Default::default() };
        assert_eq!(kinds(&classify_non_local("pytest", &ctx)), [NonLocalKind::ServiceContainer]);
    }

    #[test]
    fn gpu_runner_marks_special_hardware() {
        let ctx = StepContext { runs_on: vec!["ubuntu-latest-gpu".into()], ..Default::default() };
        assert_eq!(kinds(&classify_non_local("make test", &ctx)), [NonLocalKind::SpecialHardware]);
        let ctx = StepContext { runs_on: vec!["self-hosted".into(), "linux".into()], ..Default::default() };
        assert_eq!(kinds(&classify_non_local("make test", &ctx)), [NonLocalKind::SpecialHardware]);
    }

    #[test]
    fn secrets_are_detected_with_matched_text() {
        let f = classify_non_local("curl -H \"${{ secrets.TOKEN }}\" x", &StepContext::default());
        assert_eq!(kinds(&f), [NonLocalKind::Secret]);
        assert_eq!(f[0].detail, "${{ secrets.");
    }

    #[test]
    fn matrix_and_timeout_thresholds() {
        let ctx = StepContext { matrix_entries: 4, ..Default::default() };
        assert!(classify_non_local("make", &ctx).is_empty());
        let ctx = StepContext { matrix_entries: 5, ..Default::default() };
        assert_eq!(kinds(&classify_non_local("make", &ctx)), [NonLocalKind::LongRunningMatrix]);
        let ctx = StepContext { timeout_minutes: Some(45.0), ..Default::default() };
        assert_eq!(kinds(&classify_non_local("make", &ctx)), [NonLocalKind::LongRunningMatrix]);
    }

    #[test]
    fn cloud_actions_and_commands() {
        let ctx =
            StepContext { job_actions: vec!["aws-actions/configure-aws-credentials@v4".into()], ..Default::default() };
        assert_eq!(kinds(&classify_non_local("make deploy", &ctx)), [NonLocalKind::CloudService]);
        assert_eq!(
            kinds(&classify_non_local("gcloud auth list", &StepContext::default())),
            [NonLocalKind::CloudService]
        );
    }

    #[test]
    fn custom_table_from_toml() {
        let t = NonLocalTable::from_toml(
            "secret_patterns=['TOKEN']\ncloud_action_prefixes=[]\ncloud_command_patterns=[]\n\
             runner_label_patterns=[]\nexternal_patterns=[]\nmax_matrix_entries=1\nmax_timeout_minutes=5\n",
        )
        .unwrap();
        assert_eq!(kinds(&t.classify("echo $TOKEN", &StepContext::default())), [NonLocalKind::Secret]);
        assert!(NonLocalTable::from_toml("secret_patterns=['(']").is_err());
    }
}
