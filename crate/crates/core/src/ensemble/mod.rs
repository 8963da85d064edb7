//! Planning, parallel execution, collection and reporting of an ensemble of
//! per-config runs on one geometry.
//!
//! Layout under a work directory:
//!
//! ```text
//! manifest.toml
//! runs/<label>/            run.toml, waveform.csv, probe.csv, wss_<step>.csv
//! ensemble_<id>/<label>/   verified copies of the above
//! ensemble_<id>/index.sha256
//! ensemble_<id>/report/    cross-instance tables and charts
//! ```

mod collect;
mod execute;
mod manifest;
mod params;
mod run;

pub use collect::{collect, results_dir, verify, CollectIssue, CollectReport, INDEX_FILE};
pub use execute::{execute, ExecuteReport};
pub use manifest::{
    ensemble_id, file_sha256, plan, sha256_hex, Artifact, EnsembleManifest, InstanceRecord, Status, MANIFEST_FILE,
    RUNS_DIR,
};
pub use params::{generate_waveforms, instance_units, prepare_runs, SolverParams, ViscosityMode};
pub use run::{run_instance, write_run_input, Executor, InstanceOutcome, LocalExecutor, RemoteStub};

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::analysis::{cross_instance_report, load_instance, AnalysisError, ReportSummary};
use crate::cardiac::{CardiacError, PatientConfig};
use crate::geometry::{voxelize_primitive, GeometryError, LatticeDomain, Primitive};

pub const REPORT_DIR: &str = "report";

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("duplicate config labels: {0:?}")]
    DuplicateLabels(Vec<String>),
    #[error("no configs given")]
    NoConfigs,
    #[error("geometry {path} unreadable: {reason}")]
    GeometryUnreadable { path: String, reason: String },
    #[error("geometry {0} changed since the ensemble was planned")]
    GeometryChanged(String),
    #[error("{label}: cannot move from {from:?} to {to:?}")]
    BadTransition { label: String, from: Status, to: Status },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("no complete instance to collect {issues:?}")]
    NothingToCollect { issues: Vec<String> },
    #[error(transparent)]
    Cardiac(#[from] CardiacError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Result of a full plan → execute → collect → report pass.
#[derive(Debug)]
pub struct PipelineOutcome {
    pub manifest: EnsembleManifest,
    pub execution: ExecuteReport,
    pub collection: CollectReport,
    /// Absent when fewer than two instances were collected.
    pub report: Option<ReportSummary>,
    pub report_dir: PathBuf,
}

impl PipelineOutcome {
    /// Failed instances, the process exit status of the ensemble verb.
    pub fn failed(&self) -> usize {
        self.manifest.count(Status::Failed)
    }
}

pub fn pipeline(
    configs: &[PatientConfig],
    geometry: &Path,
    params: &SolverParams,
    workdir: &Path,
    workers: usize,
    executor: &dyn Executor,
) -> Result<PipelineOutcome, EnsembleError> {
    let mut manifest = plan(configs, geometry, params, workdir)?;
    let execution = execute(&mut manifest, workdir, workers, executor)?;
    let collection = collect(&manifest, workdir)?;
    let (report, report_dir) = report(&manifest, &collection, params.wss_interval_s)?;
    Ok(PipelineOutcome { manifest, execution, collection, report, report_dir })
}

/// Cross-instance report over the collected tree. With fewer than two
/// collected instances only a partial status note is written.
pub fn report(
    manifest: &EnsembleManifest,
    collection: &CollectReport,
    interval: f64,
) -> Result<(Option<ReportSummary>, PathBuf), EnsembleError> {
    let out = collection.dir.join(REPORT_DIR);
    let data =
        collection.collected.iter().map(|l| load_instance(&collection.dir.join(l))).collect::<Result<Vec<_>, _>>()?;
    match cross_instance_report(&data, &manifest.labels(), &out, interval) {
        Ok(summary) => Ok((Some(summary), out)),
        Err(AnalysisError::IncompleteEnsemble { missing }) => {
            fs::create_dir_all(&out)?;
            fs::write(
                out.join("status.txt"),
                format!("partial\nincomplete ensemble, missing: {}\n", missing.join(",")),
            )?;
            Ok((None, out))
        }
        Err(e) => Err(e.into()),
    }
}

/// The small cylinder used for desk-scale ensembles: 2.8 mm diameter across
/// 8 voxels, 16 voxels long.
pub fn desk_domain() -> Result<LatticeDomain, GeometryError> {
    let dx = 2.8e-3 / 8.0;
    voxelize_primitive(&Primitive::Cylinder { radius: 1.4e-3, length: 16.0 * dx }, dx)
}
