use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use super::{EvidenceItem, EvidenceKind, RepoSnapshot};

/// Directories that hold generated or vendored state rather than evidence.
const SKIP_DIRS: &[&str] = &[
    ".git",
    ".bootstrap",
    "node_modules",
    "target",
    ".venv",
    "venv",
    "__pycache__",
    ".tox",
    ".mypy_cache",
    ".pytest_cache",
];

const MAX_LAYOUT_ITEMS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanLimits {
    pub max_files: usize,
    pub snippet_bytes: usize,
    pub max_depth: usize,
}

impl Default for ScanLimits {
    fn default() -> Self {
        Self { max_files: 500, snippet_bytes: 4096, max_depth: 6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageScore {
    pub name: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackageManager {
    pub name: String,
    pub trigger_file: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructureSummary {
    /// Relative paths in walk order; directories end with `/`.
    pub entries: Vec<String>,
    pub files_examined: usize,
    pub max_depth: usize,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryReport {
    pub languages: Vec<LanguageScore>,
    pub package_managers: Vec<PackageManager>,
    pub important_files: Vec<EvidenceItem>,
    pub structure_summary: StructureSummary,
    pub evidence: Vec<EvidenceItem>,
}

impl DiscoveryReport {
    pub fn has_manager(&self, name: &str) -> bool {
        self.package_managers.iter().any(|m| m.name == name)
    }

    pub fn manager(&self, name: &str) -> Option<&PackageManager> {
        self.package_managers.iter().find(|m| m.name == name)
    }

    pub fn item(&self, path: &str) -> Option<&EvidenceItem> {
        self.evidence.iter().find(|e| e.file_path == path)
    }
}

/// Walks the snapshot (read-only) and collects bootstrap evidence.
pub fn scan_repository(snapshot: &RepoSnapshot, limits: &ScanLimits) -> DiscoveryReport {
    let root = snapshot.root.as_path();
    let mut entries = Vec::new();
    let mut files: Vec<String> = Vec::new();
    let mut truncated = false;

    let walker = WalkDir::new(root).min_depth(1).sort_by_file_name().into_iter().filter_entry(|e| {
        let name = e.file_name().to_string_lossy();
        if !e.file_type().is_dir() {
            return true;
        }
        !SKIP_DIRS.contains(&name.as_ref()) && (!name.starts_with('.') || name == ".github")
    });
    for entry in walker.filter_map(Result::ok) {
        if entry.depth() > limits.max_depth {
            truncated = true;
            continue;
        }
        let rel = rel_path(root, entry.path());
        if entry.file_type().is_dir() {
            if entries.len() < limits.max_files {
                entries.push(format!("{rel}/"));
            }
            continue;
        }
        if !entry.file_type().is_file() {
            continue;
        }
        if files.len() >= limits.max_files {
            truncated = true;
            break;
        }
        if entries.len() < limits.max_files {
            entries.push(rel.clone());
        }
        files.push(rel);
    }

    let mut evidence = Vec::new();
    let mut layout_items = 0;
    for rel in &files {
        let Some(kind) = classify(rel) else { continue };
        if kind == EvidenceKind::Layout {
            if layout_items >= MAX_LAYOUT_ITEMS {
                continue;
            }
            layout_items += 1;
        }
        if let Some(item) = read_item(root, rel, kind, limits.snippet_bytes) {
            evidence.push(item);
        }
    }

    let important_files = evidence
        .iter()
        .filter(|e| {
            matches!(
                e.kind,
                EvidenceKind::PackageMetadata
                    | EvidenceKind::Lockfile
                    | EvidenceKind::BuildConfig
                    | EvidenceKind::Makefile
            )
        })
        .cloned()
        .collect();

    DiscoveryReport {
        languages: detect_languages(&files),
        package_managers: detect_managers(root, &files),
        important_files,
        structure_summary: StructureSummary {
            entries,
            files_examined: files.len(),
            max_depth: limits.max_depth,
            truncated,
        },
        evidence,
    }
}

fn rel_path(root: &Path, path: &Path) -> String {
    path.strip_prefix(root).expect("walk stays under root").to_string_lossy().replace('\\', "/")
}

fn file_name(rel: &str) -> &str {
    rel.rsplit('/').next().unwrap_or(rel)
}

fn depth(rel: &str) -> usize {
    rel.matches('/').count()
}

fn classify(rel: &str) -> Option<EvidenceKind> {
    let name = file_name(rel);
    let lower = name.to_ascii_lowercase();
    if rel.starts_with(".github/workflows/") && (lower.ends_with(".yml") || lower.ends_with(".yaml")) {
        return Some(EvidenceKind::CiWorkflow);
    }
    if rel == ".gitlab-ci.yml" {
        return Some(EvidenceKind::CiWorkflow);
    }
    if lower.starts_with("readme") && depth(rel) <= 1 {
        return Some(EvidenceKind::Readme);
    }
    const LOCKFILES: &[&str] = &[
        "yarn.lock",
        "package-lock.json",
        "pnpm-lock.yaml",
        "poetry.lock",
        "pipfile.lock",
        "uv.lock",
        "cargo.lock",
        "go.sum",
        "gemfile.lock",
        "composer.lock",
    ];
    if LOCKFILES.contains(&lower.as_str()) {
        return Some(EvidenceKind::Lockfile);
    }
    const METADATA: &[&str] = &[
        "package.json",
        "pyproject.toml",
        "setup.py",
        "setup.cfg",
        "pipfile",
        "cargo.toml",
        "go.mod",
        "pom.xml",
        "build.gradle",
        "build.gradle.kts",
        "gemfile",
        "composer.json",
        "environment.yml",
    ];
    if METADATA.contains(&lower.as_str()) || (lower.starts_with("requirements") && lower.ends_with(".txt")) {
        return Some(EvidenceKind::PackageMetadata);
    }
    const BUILD: &[&str] = &[
        "cmakelists.txt",
        "meson.build",
        "workspace",
        "workspace.bazel",
        "module.bazel",
        "build.bazel",
        "tox.ini",
        "noxfile.py",
        "dockerfile",
        ".nvmrc",
        ".python-version",
        "rust-toolchain",
        "rust-toolchain.toml",
        "configure.ac",
        "configure",
        ".tool-versions",
    ];
    if BUILD.contains(&lower.as_str()) {
        return Some(EvidenceKind::BuildConfig);
    }
    if matches!(name, "Makefile" | "makefile" | "GNUmakefile") {
        return Some(EvidenceKind::Makefile);
    }
    if (lower.ends_with(".sh") && depth(rel) <= 1) || (rel.starts_with("scripts/") && depth(rel) == 1) {
        return Some(EvidenceKind::Script);
    }
    if is_test_file(rel) {
        return Some(EvidenceKind::Layout);
    }
    None
}

fn is_test_file(rel: &str) -> bool {
    let name = file_name(rel);
    let in_test_dir = rel.split('/').rev().skip(1).any(|d| matches!(d, "tests" | "test" | "__tests__" | "spec"));
    let has_source_ext =
        [".py", ".js", ".ts", ".go", ".rs", ".c", ".cc", ".cpp", ".java", ".rb"].iter().any(|e| name.ends_with(e));
    has_source_ext
        && (in_test_dir
            || name.starts_with("test_")
            || name.ends_with("_test.go")
            || name.ends_with("_test.py")
            || name.contains(".test.")
            || name.contains(".spec."))
}

fn read_item(root: &Path, rel: &str, kind: EvidenceKind, cap: usize) -> Option<EvidenceItem> {
    let bytes = fs::read(root.join(rel)).ok()?;
    let prefix = &bytes[..bytes.len().min(cap)];
    let snippet = match std::str::from_utf8(prefix) {
        Ok(s) => s.to_string(),
        // A multi-byte character cut by the cap: keep the valid prefix.
        Err(e) if e.error_len().is_none() => std::str::from_utf8(&prefix[..e.valid_up_to()]).ok()?.to_string(),
        Err(_) => return None,
    };
    let line_range = if snippet.is_empty() { None } else { Some((1, snippet.lines().count().max(1))) };
    Some(EvidenceItem { file_path: rel.to_string(), kind, snippet, line_range })
}

fn language_of(rel: &str) -> Option<&'static str> {
    let name = file_name(rel);
    let lower = name.to_ascii_lowercase();
    let manifest = match lower.as_str() {
        "pyproject.toml" | "setup.py" | "setup.cfg" | "pipfile" | "poetry.lock" => Some("python"),
        "package.json" | "yarn.lock" | "package-lock.json" | "pnpm-lock.yaml" => Some("javascript"),
        "cargo.toml" | "cargo.lock" => Some("rust"),
        "go.mod" | "go.sum" => Some("go"),
        "pom.xml" | "build.gradle" | "build.gradle.kts" => Some("java"),
        "gemfile" => Some("ruby"),
        _ if lower.starts_with("requirements") && lower.ends_with(".txt") => Some("python"),
        _ => None,
    };
    if manifest.is_some() {
        return manifest;
    }
    let ext = lower.rsplit_once('.').map(|(_, e)| e)?;
    Some(match ext {
        "py" => "python",
        "js" | "mjs" | "cjs" | "jsx" => "javascript",
        "ts" | "tsx" => "typescript",
        "rs" => "rust",
        "go" => "go",
        "c" | "h" => "c",
        "cc" | "cpp" | "cxx" | "hpp" | "hh" => "cpp",
        "java" => "java",
        "rb" => "ruby",
        "kt" => "kotlin",
        _ => return None,
    })
}

fn detect_languages(files: &[String]) -> Vec<LanguageScore> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for f in files {
        if let Some(lang) = language_of(f) {
            *counts.entry(lang).or_default() += 1;
        }
    }
    let total: usize = counts.values().sum();
    let mut scores: Vec<LanguageScore> = counts
        .into_iter()
        .map(|(name, n)| LanguageScore {
            name: name.to_string(),
            confidence: ((n as f64 / total as f64) * 1000.0).round() / 1000.0,
        })
        .collect();
    scores.sort_by(|a, b| b.confidence.partial_cmp(&a.confidence).expect("finite").then_with(|| a.name.cmp(&b.name)));
    scores
}

/// Shallowest, then lexicographically first, file whose name satisfies `pred`.
fn find_file(files: &[String], pred: impl Fn(&str) -> bool) -> Option<&String> {
    files.iter().filter(|f| pred(file_name(f))).min_by(|a, b| depth(a).cmp(&depth(b)).then_with(|| a.cmp(b)))
}

fn detect_managers(root: &Path, files: &[String]) -> Vec<PackageManager> {
    let mut out = Vec::new();
    let mut push = |name: &str, trigger: &String| {
        out.push(PackageManager { name: name.to_string(), trigger_file: trigger.clone() });
    };
    let named = |n: &'static str| move |f: &str| f == n;

    // JavaScript: the lockfile decides the manager.
    if let Some(f) = find_file(files, named("yarn.lock")) {
        push("yarn", f);
    } else if let Some(f) = find_file(files, named("pnpm-lock.yaml")) {
        push("pnpm", f);
    } else if let Some(f) = find_file(files, named("package-lock.json")) {
        push("npm", f);
    } else if let Some(f) = find_file(files, named("package.json")) {
        push("npm", f);
    }

    // Python.
    let pyproject = find_file(files, named("pyproject.toml"));
    let poetry_manifest = pyproject
        .filter(|p| fs::read_to_string(root.join(p.as_str())).map(|t| t.contains("[tool.poetry")).unwrap_or(false));
    let mut python_tool = false;
    if let Some(f) = find_file(files, named("poetry.lock")).or(poetry_manifest) {
        push("poetry", f);
        python_tool = true;
    }
    if let Some(f) = find_file(files, named("Pipfile.lock")).or_else(|| find_file(files, named("Pipfile"))) {
        push("pipenv", f);
        python_tool = true;
    }
    if let Some(f) = find_file(files, named("uv.lock")) {
        push("uv", f);
        python_tool = true;
    }
    let requirements = find_file(files, named("requirements.txt"))
        .or_else(|| find_file(files, |n| n.starts_with("requirements") && n.ends_with(".txt")));
    if let Some(f) = requirements {
        push("pip", f);
    } else if !python_tool {
        if let Some(f) = pyproject.or_else(|| find_file(files, named("setup.py"))) {
            push("pip", f);
        }
    }

    if let Some(f) = find_file(files, named("Cargo.toml")) {
        push("cargo", f);
    }
    if let Some(f) = find_file(files, named("go.mod")) {
        push("go", f);
    }
    if let Some(f) = find_file(files, named("pom.xml")) {
        push("maven", f);
    }
    if let Some(f) = find_file(files, |n| n == "build.gradle" || n == "build.gradle.kts") {
        push("gradle", f);
    }
    if let Some(f) = find_file(files, named("Gemfile")) {
        push("bundler", f);
    }
    if let Some(f) = find_file(files, named("CMakeLists.txt")) {
        push("cmake", f);
    }
    if let Some(f) = find_file(files, |n| matches!(n, "Makefile" | "makefile" | "GNUmakefile")) {
        push("make", f);
    }
    out
}
