use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EnsembleError, SolverParams};
use crate::cardiac::{format_configs, PatientConfig};

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const RUNS_DIR: &str = "runs";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Planned,
    Running,
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub config: PatientConfig,
    pub config_sha256: String,
    pub status: Status,
    /// Run directory relative to the ensemble work directory.
    pub result_dir: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_clock_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub artifacts: Vec<Artifact>,
}

impl InstanceRecord {
    pub fn label(&self) -> &str {
        &self.config.label
    }

    /// Moves to `next`, rejecting transitions outside
    /// planned → running → complete | failed.
    pub fn transition(&mut self, next: Status) -> Result<(), EnsembleError> {
        let ok = matches!(
            (self.status, next),
            (Status::Planned, Status::Running)
                | (Status::Running, Status::Complete)
                | (Status::Running, Status::Failed)
        );
        if !ok {
            return Err(EnsembleError::BadTransition { label: self.label().into(), from: self.status, to: next });
        }
        self.status = next;
        Ok(())
    }

    /// Returns an unfinished or failed instance to the planned state.
    pub fn reset(&mut self) {
        self.status = Status::Planned;
        self.wall_clock_s = None;
        self.steps = None;
        self.diagnostics = None;
        self.artifacts.clear();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub id: String,
    pub geometry: PathBuf,
    pub geometry_sha256: String,
    pub params: SolverParams,
    pub instances: Vec<InstanceRecord>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> std::io::Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Content hash over configs, geometry bytes and solver parameters.
pub fn ensemble_id(configs: &[PatientConfig], geometry_sha256: &str, params: &SolverParams) -> String {
    let mut h = Sha256::new();
    h.update(format_configs(configs).as_bytes());
    h.update(b"\0");
    h.update(geometry_sha256.as_bytes());
    h.update(b"\0");
    h.update(params.to_toml().as_bytes());
    hex::encode(h.finalize())[..16].to_string()
}

impl EnsembleManifest {
    pub fn path(workdir: &Path) -> PathBuf {
        workdir.join(MANIFEST_FILE)
    }

    pub fn load(workdir: &Path) -> Result<Self, EnsembleError> {
        let text = fs::read_to_string(Self::path(workdir))?;
        toml::from_str(&text).map_err(|e| EnsembleError::Manifest(e.to_string()))
    }

    /// Replace-on-write: the manifest on disk is always a complete document.
    pub fn save(&self, workdir: &Path) -> Result<(), EnsembleError> {
        fs::create_dir_all(workdir)?;
        let text = toml::to_string(self).map_err(|e| EnsembleError::Manifest(e.to_string()))?;
        let tmp = workdir.join(format!("{MANIFEST_FILE}.tmp"));
        fs::write(&tmp, text)?;
        fs::rename(&tmp, Self::path(workdir))?;
        Ok(())
    }

    pub fn configs(&self) -> Vec<PatientConfig> {
        self.instances.iter().map(|i| i.config.clone()).collect()
    }

    pub fn labels(&self) -> Vec<String> {
        self.instances.iter().map(|i| i.label().to_string()).collect()
    }

    pub fn count(&self, status: Status) -> usize {
        self.instances.iter().filter(|i| i.status == status).count()
    }
}

/// Builds and persists the manifest for an ensemble in `workdir`. A manifest
/// already there with the same id is kept, preserving instance progress.
pub fn plan(
    configs: &[PatientConfig],
    geometry: &Path,
    params: &SolverParams,
    workdir: &Path,
) -> Result<EnsembleManifest, EnsembleError> {
    if configs.is_empty() {
        return Err(EnsembleError::NoConfigs);
    }
    let mut seen = HashSet::new();
    let dups: Vec<String> = configs.iter().filter(|c| !seen.insert(c.label.clone())).map(|c| c.label.clone()).collect();
    if !dups.is_empty() {
        return Err(EnsembleError::DuplicateLabels(dups));
    }
    for c in configs {
        c.validate()?;
    }
    params.validate()?;
    let bytes = fs::read(geometry).map_err(|e| EnsembleError::GeometryUnreadable {
        path: geometry.display().to_string(),
        reason: e.to_string(),
    })?;
    crate::geometry::read_domain(geometry).map_err(|e| EnsembleError::GeometryUnreadable {
        path: geometry.display().to_string(),
        reason: e.to_string(),
    })?;
    let geometry_sha256 = sha256_hex(&bytes);
    let id = ensemble_id(configs, &geometry_sha256, params);

    if let Ok(existing) = EnsembleManifest::load(workdir) {
        if existing.id == id {
            return Ok(existing);
        }
        log::info!("replacing manifest of ensemble {} with {id}", existing.id);
    }
    let instances = configs
        .iter()
        .map(|c| InstanceRecord {
            config: c.clone(),
            config_sha256: sha256_hex(format_configs(std::slice::from_ref(c)).as_bytes()),
            status: Status::Planned,
            result_dir: format!("{RUNS_DIR}/{}", c.label),
            wall_clock_s: None,
            steps: None,
            diagnostics: None,
            artifacts: Vec::new(),
        })
        .collect();
    let m = EnsembleManifest {
        id,
        geometry: fs::canonicalize(geometry).unwrap_or_else(|_| geometry.to_path_buf()),
        geometry_sha256,
        params: params.clone(),
        instances,
    };
    m.save(workdir)?;
    Ok(m)
}
