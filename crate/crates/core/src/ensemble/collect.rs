use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::manifest::{file_sha256, EnsembleManifest, Status};
use super::EnsembleError;

pub const INDEX_FILE: &str = "index.sha256";

/// Why an instance could not be collected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CollectIssue {
    MissingArtifact { label: String, name: String },
    ChecksumMismatch { label: String, name: String },
}

impl std::fmt::Display for CollectIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::MissingArtifact { label, name } => write!(f, "{label}: missing artifact {name}"),
            Self::ChecksumMismatch { label, name } => write!(f, "{label}: checksum mismatch for {name}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollectReport {
    pub dir: PathBuf,
    pub collected: Vec<String>,
    /// Labels not collected: incomplete, failed, or with bad artifacts.
    pub absent: Vec<String>,
    pub issues: Vec<CollectIssue>,
}

pub fn results_dir(workdir: &Path, manifest: &EnsembleManifest) -> PathBuf {
    workdir.join(format!("ensemble_{}", manifest.id))
}

/// Copies verified artifacts of complete instances into
/// `ensemble_<id>/<label>/` and writes a checksum index.
pub fn collect(manifest: &EnsembleManifest, workdir: &Path) -> Result<CollectReport, EnsembleError> {
    let out = results_dir(workdir, manifest);
    let mut report = CollectReport { dir: out.clone(), collected: Vec::new(), absent: Vec::new(), issues: Vec::new() };
    let mut index = String::new();
    for inst in &manifest.instances {
        let label = inst.label().to_string();
        if inst.status != Status::Complete {
            report.absent.push(label);
            continue;
        }
        let src = workdir.join(&inst.result_dir);
        let before = report.issues.len();
        for a in &inst.artifacts {
            match file_sha256(&src.join(&a.name)) {
                Err(_) => {
                    report.issues.push(CollectIssue::MissingArtifact { label: label.clone(), name: a.name.clone() })
                }
                Ok(h) if h != a.sha256 => {
                    report.issues.push(CollectIssue::ChecksumMismatch { label: label.clone(), name: a.name.clone() })
                }
                Ok(_) => {}
            }
        }
        let dest = out.join(&label);
        if report.issues.len() > before {
            if dest.exists() {
                fs::remove_dir_all(&dest)?;
            }
            report.absent.push(label);
            continue;
        }
        fs::create_dir_all(&dest)?;
        for a in &inst.artifacts {
            fs::copy(src.join(&a.name), dest.join(&a.name))?;
            let _ = writeln!(index, "{}  {label}/{}", a.sha256, a.name);
        }
        report.collected.push(label);
    }
    if report.collected.is_empty() {
        return Err(EnsembleError::NothingToCollect { issues: report.issues.iter().map(|i| i.to_string()).collect() });
    }
    fs::write(out.join(INDEX_FILE), index)?;
    Ok(report)
}

/// Re-checks a collected tree against its index; returns the problems found.
pub fn verify(dir: &Path) -> Result<Vec<CollectIssue>, EnsembleError> {
    let text = fs::read_to_string(dir.join(INDEX_FILE))?;
    let mut issues = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (sha, rel) =
            line.split_once("  ").ok_or_else(|| EnsembleError::Manifest(format!("bad index line {line:?}")))?;
        let (label, name) = rel.split_once('/').unwrap_or(("", rel));
        let (label, name) = (label.to_string(), name.to_string());
        match file_sha256(&dir.join(rel)) {
            Err(_) => issues.push(CollectIssue::MissingArtifact { label, name }),
            Ok(h) if h != sha => issues.push(CollectIssue::ChecksumMismatch { label, name }),
            Ok(_) => {}
        }
    }
    Ok(issues)
}
