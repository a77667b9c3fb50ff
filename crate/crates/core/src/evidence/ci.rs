use std::fs;

use serde::{Deserialize, Serialize};
use serde_yaml::Value;

use super::nonlocal::{NonLocalFeature, NonLocalKind, NonLocalTable, StepContext};
use super::RepoSnapshot;

const WORKFLOW_DIR: &str = ".github/workflows";

/// Workflow file plus `<job>/<step>` identifier.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StepLocation {
    pub workflow: String,
    pub step: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateCommand {
    pub command: String,
    pub workflow: String,
    pub step: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CiEvidenceReport {
    pub workflow_files: Vec<String>,
    pub candidate_commands: Vec<CandidateCommand>,
    pub non_local_features: Vec<NonLocalFeature>,
}

pub fn extract_ci_evidence(snapshot: &RepoSnapshot) -> CiEvidenceReport {
    extract_ci_evidence_with(snapshot, &NonLocalTable::default())
}

/// Reads every GitHub Actions workflow and splits its `run:` steps into
/// local candidates and non-local exclusions.
pub fn extract_ci_evidence_with(snapshot: &RepoSnapshot, table: &NonLocalTable) -> CiEvidenceReport {
    let mut report = CiEvidenceReport::default();
    let dir = snapshot.root.join(WORKFLOW_DIR);
    let Ok(read) = fs::read_dir(&dir) else {
        return report;
    };
    let mut names: Vec<String> = read
        .filter_map(Result::ok)
        .filter(|e| e.file_type().map(|t| t.is_file()).unwrap_or(false))
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".yml") || n.ends_with(".yaml"))
        .collect();
    names.sort();

    for name in names {
        let rel = format!("{WORKFLOW_DIR}/{name}");
        report.workflow_files.push(rel.clone());
        let parsed = fs::read_to_string(dir.join(&name)).ok().and_then(|t| serde_yaml::from_str::<Value>(&t).ok());
        let jobs = parsed.as_ref().and_then(|v| v.get("jobs")).and_then(Value::as_mapping);
        let Some(jobs) = jobs else {
            report.non_local_features.push(NonLocalFeature {
                kind: NonLocalKind::ExternalDependency,
                location: StepLocation { workflow: rel, step: "-".into() },
                detail: "unparseable".into(),
            });
            continue;
        };
        for (job_key, job) in jobs {
            let job_id = scalar_text(job_key);
            scan_job(&rel, &job_id, job, table, &mut report);
        }
    }
    report
}

fn scan_job(workflow: &str, job_id: &str, job: &Value, table: &NonLocalTable, report: &mut CiEvidenceReport) {
    let steps: Vec<&Value> =
        job.get("steps").and_then(Value::as_sequence).map(|s| s.iter().collect()).unwrap_or_default();
    let base = StepContext {
        location: StepLocation::default(),
        runs_on: runner_labels(job.get("runs-on")),
        services: job
            .get("services")
            .and_then(Value::as_mapping)
            .map(|m| m.keys().map(scalar_text).collect())
            .unwrap_or_default(),
        matrix_entries: matrix_entries(job.get("strategy").and_then(|s| s.get("matrix"))),
        timeout_minutes: job.get("timeout-minutes").and_then(as_minutes),
        job_actions: steps.iter().filter_map(|s| s.get("uses").and_then(Value::as_str).map(str::to_string)).collect(),
    };

    for (i, step) in steps.iter().enumerate() {
        let Some(run) = step.get("run").and_then(Value::as_str) else {
            continue;
        };
        let step_name =
            step.get("id").or_else(|| step.get("name")).map(scalar_text).unwrap_or_else(|| format!("step-{i}"));
        let location = StepLocation { workflow: workflow.to_string(), step: format!("{job_id}/{step_name}") };
        let mut ctx = base.clone();
        ctx.location = location.clone();
        if let Some(t) = step.get("timeout-minutes").and_then(as_minutes) {
            ctx.timeout_minutes = Some(t);
        }
        let mut text = run.to_string();
        for key in ["env", "with"] {
            if let Some(m) = step.get(key).and_then(Value::as_mapping) {
                for (k, v) in m {
                    text.push('\n');
                    text.push_str(&format!("{}={}", scalar_text(k), scalar_text(v)));
                }
            }
        }
        let features = table.classify(&text, &ctx);
        if features.is_empty() {
            report.candidate_commands.push(CandidateCommand {
                command: run.trim().to_string(),
                workflow: location.workflow,
                step: location.step,
            });
        } else {
            report.non_local_features.extend(features);
        }
    }
}

fn scalar_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Number(n) => n.to_string(),
        Value::Bool(b) => b.to_string(),
        Value::Null => String::new(),
        other => serde_yaml::to_string(other).unwrap_or_default().trim().to_string(),
    }
}

fn as_minutes(v: &Value) -> Option<f64> {
    v.as_f64().or_else(|| v.as_str().and_then(|s| s.trim().parse().ok()))
}

fn runner_labels(v: Option<&Value>) -> Vec<String> {
    match v {
        Some(Value::String(s)) => vec![s.clone()],
        Some(Value::Sequence(seq)) => seq.iter().map(scalar_text).collect(),
        Some(Value::Mapping(m)) => m.values().flat_map(|x| runner_labels(Some(x))).collect(),
        _ => Vec::new(),
    }
}

/// Number of job instances a matrix expands to (cartesian product of its
/// list-valued axes plus explicit `include` rows). Expression-valued
/// matrices count as one entry.
fn matrix_entries(v: Option<&Value>) -> usize {
    let Some(m) = v.and_then(Value::as_mapping) else {
        return 0;
    };
    let mut product = 1usize;
    let mut axes = 0;
    let mut include = 0;
    for (k, val) in m {
        match k.as_str() {
            Some("include") => include = val.as_sequence().map(Vec::len).unwrap_or(0),
            Some("exclude") => {}
            _ => {
                if let Some(seq) = val.as_sequence() {
                    product = product.saturating_mul(seq.len());
                    axes += 1;
                }
            }
        }
    }
    if axes == 0 {
        product = if include > 0 { 0 } else { 1 };
    }
    product + include
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snap_with(workflows: &[(&str, &str)]) -> (tempfile::TempDir, RepoSnapshot) {
        let dir = tempfile::tempdir().unwrap();
        let wf = dir.path().join(WORKFLOW_DIR);
        fs::create_dir_all(&wf).unwrap();
        for (name, body) in workflows {
            fs::write(wf.join(name), body).unwrap();
        }
        let s = RepoSnapshot::in_place(dir.path()).unwrap();
        (dir, s)
    }

    #[test]
    fn plain_run_step_is_a_candidate() {
        let (_d, s) = snap_with(&[(
            "ci.yml",
            "on: push\njobs:\n  test:\n    runs-on: ubuntu-latest\n    steps:\n      - uses: actions/checkout@v4\n      - name: unit\n        run: make test\n",
        )]);
        let r = extract_ci_evidence(&s);
        assert_eq!(r.workflow_files, [".github/workflows/ci.yml"]);
        assert_eq!(
            r.candidate_commands,
            [CandidateCommand {
                command: "make test".into(),
                workflow: ".github/workflows/ci.yml".into(),
                step: "test/unit".into()
            }]
        );
        assert!(r.non_local_features.is_empty());
    }

    #[test]
    fn secret_step_is_excluded() {
        let (_d, s) = snap_with(&[(
            "release.yml",
            "jobs:\n  pub:\n    runs-on: ubuntu-latest\n    steps:\n      - run: make test\n      - id: upload\n        run: ./upload.sh\n        env:\n          TOKEN: ${{ secrets.PYPI_TOKEN }}\n",
        )]);
        let r = extract_ci_evidence(&s);
        assert_eq!(r.candidate_commands.len(), 1);
        assert_eq!(r.candidate_commands[0].step, "pub/step-0");
        assert_eq!(r.non_local_features.len(), 1);
        assert_eq!(r.non_local_features[0].kind, NonLocalKind::Secret);
        assert_eq!(r.non_local_features[0].location.step, "pub/upload");
    }

    #[test]
    fn job_services_exclude_every_run_step() {
        let (_d, s) = snap_with(&[(
            "db.yml",
            "jobs:\n  it:\n    runs-on: ubuntu-latest\n    services:\n      postgres:\n        image: postgres:16\n    steps:\n      - run: pytest\n      - run: echo done\n",
        )]);
        let r = extract_ci_evidence(&s);
        assert!(r.candidate_commands.is_empty());
        assert_eq!(r.non_local_features.len(), 2);
        assert!(r.non_local_features.iter().all(|f| f.kind == NonLocalKind::ServiceContainer));
    }

    #[test]
    fn unparseable_workflow_is_recorded_not_fatal() {
        let (_d, s) =
            snap_with(&[("bad.yml", "jobs: [unclosed\n"), ("ok.yml", "jobs:\n  a:\n    steps:\n      - run: ls\n")]);
        let r = extract_ci_evidence(&s);
        assert_eq!(r.workflow_files.len(), 2);
        assert_eq!(r.candidate_commands.len(), 1);
        let bad = &r.non_local_features[0];
        assert_eq!(bad.kind, NonLocalKind::ExternalDependency);
        assert_eq!(bad.detail, "unparseable");
        assert_eq!(bad.location.workflow, ".github/workflows/bad.yml");
    }

    #[test]
    fn no_ci_directory_gives_empty_report() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("x"), "").unwrap();
        let r = extract_ci_evidence(&RepoSnapshot::in_place(dir.path()).unwrap());
        assert_eq!(r, CiEvidenceReport::default());
    }

    #[test]
    fn matrix_sizes() {
        let v: Value = serde_yaml::from_str("os: [a, b]\npy: ['3.9', '3.10', '3.11']\n").unwrap();
        assert_eq!(matrix_entries(Some(&v)), 6);
        let v: Value = serde_yaml::from_str("include:\n  - {a: 1}\n  - {a: 2}\n").unwrap();
        assert_eq!(matrix_entries(Some(&v)), 2);
        assert_eq!(matrix_entries(None), 0);
    }
}
