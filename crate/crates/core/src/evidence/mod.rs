//! Repository evidence: snapshot acquisition plus the deterministic scans that
//! produce the discovery and CI reports fed to planners.
//!
//! Nothing in this module executes repository files or touches the network,
//! except for the initial fetch of a URL source.

mod ci;
mod nonlocal;
mod scan;
mod snapshot;

use serde::{Deserialize, Serialize};

pub use ci::{extract_ci_evidence, extract_ci_evidence_with, CandidateCommand, CiEvidenceReport, StepLocation};
pub use nonlocal::{classify_non_local, NonLocalFeature, NonLocalKind, NonLocalTable, StepContext};
pub use scan::{scan_repository, DiscoveryReport, LanguageScore, PackageManager, ScanLimits, StructureSummary};
pub use snapshot::{is_url, snapshot_repository, tree_hash, RepoSnapshot, SnapshotError};

pub(crate) use snapshot::{copy_tree, repo_name, SNAPSHOT_EXCLUDES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceKind {
    Readme,
    PackageMetadata,
    Lockfile,
    BuildConfig,
    Makefile,
    Script,
    CiWorkflow,
    Layout,
}

/// A verbatim excerpt of one repository file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceItem {
    pub file_path: String,
    pub kind: EvidenceKind,
    pub snippet: String,
    pub line_range: Option<(usize, usize)>,
}
