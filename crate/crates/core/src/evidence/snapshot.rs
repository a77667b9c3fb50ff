use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::Command;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

/// Directories never copied into a snapshot. Version-control metadata is
/// read for the commit id first; an existing contract is regenerated.
pub(crate) const SNAPSHOT_EXCLUDES: &[&str] = &[".git", ".bootstrap"];

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("repository source `{source_ref}` could not be fetched: {reason}")]
    SourceUnreachable { source_ref: String, reason: String },
    #[error("`{0}` is not a repository (missing or empty)")]
    NotARepository(String),
    #[error("snapshot i/o failed: {0}")]
    Io(#[from] io::Error),
}

/// A local, read-only working copy of the repository under bootstrap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepoSnapshot {
    pub source: String,
    pub root: PathBuf,
    pub commit_id: Option<String>,
    pub acquired_at: DateTime<Utc>,
}

impl RepoSnapshot {
    /// Treats an existing directory as the snapshot without copying it.
    pub fn in_place(root: impl Into<PathBuf>) -> Result<Self, SnapshotError> {
        let root = root.into();
        if !root.is_dir() {
            return Err(SnapshotError::NotARepository(root.display().to_string()));
        }
        let root = root.canonicalize()?;
        Ok(Self { source: root.display().to_string(), commit_id: git_head(&root), root, acquired_at: Utc::now() })
    }

    /// Short name used for run directories and sandbox copies.
    pub fn name(&self) -> String {
        repo_name(&self.source)
    }

    /// True when the snapshot contains at least one file.
    pub fn is_nonempty(&self) -> bool {
        dir_has_files(&self.root)
    }
}

pub fn is_url(source: &str) -> bool {
    ["http://", "https://", "git://", "ssh://", "file://", "git@"].iter().any(|p| source.starts_with(p))
}

/// Acquires `source` (a local directory or a fetchable git URL) into `workdir`.
pub fn snapshot_repository(source: &str, workdir: &Path) -> Result<RepoSnapshot, SnapshotError> {
    fs::create_dir_all(workdir)?;
    let dest = unique_child(workdir, &repo_name(source));
    if is_url(source) {
        let output = Command::new("git")
            .args(["clone", "--depth", "1", "--quiet", source])
            .arg(&dest)
            .env("GIT_TERMINAL_PROMPT", "0")
            .output()
            .map_err(|e| SnapshotError::SourceUnreachable { source_ref: source.to_string(), reason: e.to_string() })?;
        if !output.status.success() {
            let _ = fs::remove_dir_all(&dest);
            return Err(SnapshotError::SourceUnreachable {
                source_ref: source.to_string(),
                reason: String::from_utf8_lossy(&output.stderr).trim().to_string(),
            });
        }
        let commit_id = git_head(&dest);
        fs::remove_dir_all(dest.join(".git"))?;
        return Ok(RepoSnapshot {
            source: source.to_string(),
            root: dest.canonicalize()?,
            commit_id,
            acquired_at: Utc::now(),
        });
    }

    let src = Path::new(source);
    if !src.is_dir() || !dir_has_files(src) {
        return Err(SnapshotError::NotARepository(source.to_string()));
    }
    let commit_id = git_head(src);
    copy_tree(src, &dest, SNAPSHOT_EXCLUDES)?;
    Ok(RepoSnapshot { source: source.to_string(), root: dest.canonicalize()?, commit_id, acquired_at: Utc::now() })
}

fn git_head(dir: &Path) -> Option<String> {
    if !dir.join(".git").exists() {
        return None;
    }
    let out = Command::new("git").arg("-C").arg(dir).args(["rev-parse", "HEAD"]).output().ok()?;
    out.status.success().then(|| String::from_utf8_lossy(&out.stdout).trim().to_string()).filter(|s| !s.is_empty())
}

pub(crate) fn repo_name(source: &str) -> String {
    let trimmed = source.trim_end_matches('/');
    let last = trimmed.rsplit(['/', ':']).next().unwrap_or(trimmed);
    let name = last.trim_end_matches(".git");
    let clean: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect();
    if clean.is_empty() || clean == "." || clean == ".." {
        "repo".to_string()
    } else {
        clean
    }
}

fn unique_child(dir: &Path, name: &str) -> PathBuf {
    let first = dir.join(name);
    if !first.exists() {
        return first;
    }
    (1..).map(|i| dir.join(format!("{name}-{i}"))).find(|p| !p.exists()).expect("unbounded search")
}

fn dir_has_files(dir: &Path) -> bool {
    WalkDir::new(dir)
        .min_depth(1)
        .into_iter()
        .filter_entry(|e| !SNAPSHOT_EXCLUDES.iter().any(|x| e.file_name() == *x))
        .filter_map(Result::ok)
        .any(|e| e.file_type().is_file())
}

/// Recursively copies `src` into `dest`, skipping top-level-or-nested entries
/// named in `excludes`. Symlinks are recreated, not followed.
pub(crate) fn copy_tree(src: &Path, dest: &Path, excludes: &[&str]) -> io::Result<()> {
    fs::create_dir_all(dest)?;
    let walker = WalkDir::new(src)
        .min_depth(1)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| !excludes.iter().any(|x| e.file_name() == *x));
    for entry in walker {
        let entry = entry.map_err(io::Error::other)?;
        let rel = entry.path().strip_prefix(src).expect("walk stays under root");
        let target = dest.join(rel);
        let ft = entry.file_type();
        if ft.is_dir() {
            fs::create_dir_all(&target)?;
        } else if ft.is_symlink() {
            let link = fs::read_link(entry.path())?;
            std::os::unix::fs::symlink(link, &target)?;
        } else {
            fs::copy(entry.path(), &target)?;
        }
    }
    Ok(())
}

/// Order-independent digest of a directory tree's paths and bytes.
pub fn tree_hash(root: &Path, excludes: &[&str]) -> io::Result<String> {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    let walker = WalkDir::new(root)
        .min_depth(1)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| !excludes.iter().any(|x| e.file_name() == *x));
    for entry in walker {
        let entry = entry.map_err(io::Error::other)?;
        let rel = entry.path().strip_prefix(root).expect("under root");
        hasher.update(rel.to_string_lossy().as_bytes());
        hasher.update([0]);
        if entry.file_type().is_file() {
            let bytes = fs::read(entry.path())?;
            hasher.update((bytes.len() as u64).to_le_bytes());
            hasher.update(&bytes);
        } else if entry.file_type().is_dir() {
            hasher.update(b"/");
        }
    }
    Ok(hex::encode(hasher.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_path_is_not_a_repository() {
        let work = tempfile::tempdir().unwrap();
        let err = snapshot_repository("/no/such/dir", work.path()).unwrap_err();
        assert!(matches!(err, SnapshotError::NotARepository(_)));
    }

    #[test]
    fn empty_directory_is_not_a_repository() {
        let src = tempfile::tempdir().unwrap();
        let work = tempfile::tempdir().unwrap();
        let err = snapshot_repository(src.path().to_str().unwrap(), work.path()).unwrap_err();
        assert!(matches!(err, SnapshotError::NotARepository(_)));
    }

    #[test]
    fn local_copy_has_no_commit_and_same_content() {
        let src = tempfile::tempdir().unwrap();
        let proj = src.path().join("py-pip");
        fs::create_dir_all(proj.join("tests")).unwrap();
        fs::write(proj.join("README.md"), "hi\n").unwrap();
        fs::write(proj.join("tests/test_a.py"), "def test_a():\n    pass\n").unwrap();
        let work = tempfile::tempdir().unwrap();
        let snap = snapshot_repository(proj.to_str().unwrap(), work.path()).unwrap();
        assert_eq!(snap.root, work.path().join("py-pip").canonicalize().unwrap());
        assert_eq!(snap.commit_id, None);
        assert_eq!(tree_hash(&proj, &[]).unwrap(), tree_hash(&snap.root, &[]).unwrap());
    }

    #[test]
    fn unreachable_url_is_reported() {
        let work = tempfile::tempdir().unwrap();
        let err = snapshot_repository("file:///no/such/repo.git", work.path()).unwrap_err();
        assert!(matches!(err, SnapshotError::SourceUnreachable { .. }));
    }

    #[test]
    fn repo_names_are_sanitized() {
        assert_eq!(repo_name("https://github.com/acme/widget.git"), "widget");
        assert_eq!(repo_name("git@github.com:acme/widget"), "widget");
        assert_eq!(repo_name("fixtures/py-pip/"), "py-pip");
        assert_eq!(repo_name("/"), "repo");
    }
}
