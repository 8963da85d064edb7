use std::fs;
use std::path::Path;

use crate::analysis::WAVEFORM_FILE;
use crate::cardiac::{read_waveform, write_waveform, Waveform};
use crate::coupling::{schedule_from_waveform, ProfileKind};
use crate::extraction::{ProbePlane, ProbeRecorder, RunMeta, WssRecorder, META_FILE, PROBE_FILE};
use crate::geometry::LatticeDomain;
use crate::lbm::{run, LbmError, Solver, SolverConfig};

/// What a finished instance reports back.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceOutcome {
    pub steps: u64,
    /// Artifact file names inside the run directory, sorted.
    pub artifacts: Vec<String>,
    pub peak_wss: f64,
}

/// Runs one prepared instance.
pub trait Executor: Sync {
    fn name(&self) -> &'static str;
    fn run(&self, dir: &Path, domain: &LatticeDomain, threads: usize) -> Result<InstanceOutcome, String>;
}

/// Runs instances in-process.
#[derive(Debug, Default, Clone, Copy)]
pub struct LocalExecutor;

impl Executor for LocalExecutor {
    fn name(&self) -> &'static str {
        "local"
    }

    fn run(&self, dir: &Path, domain: &LatticeDomain, threads: usize) -> Result<InstanceOutcome, String> {
        run_instance(dir, domain, threads)
    }
}

/// Placeholder for a batch-scheduler backend; every submission fails.
#[derive(Debug, Default, Clone, Copy)]
pub struct RemoteStub;

impl Executor for RemoteStub {
    fn name(&self) -> &'static str {
        "remote-stub"
    }

    fn run(&self, dir: &Path, _: &LatticeDomain, _: usize) -> Result<InstanceOutcome, String> {
        Err(format!("no remote backend configured for {}", dir.display()))
    }
}

/// Writes the run description and inlet waveform an instance starts from.
pub fn write_run_input(dir: &Path, meta: &RunMeta, waveform: &Waveform) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    meta.write(dir).map_err(std::io::Error::other)?;
    write_waveform(waveform, &dir.join(WAVEFORM_FILE)).map_err(std::io::Error::other)
}

fn describe(e: &LbmError) -> String {
    match e {
        LbmError::Diverged { .. } => format!("Diverged: {e}"),
        _ => e.to_string(),
    }
}

fn clear_outputs(dir: &Path) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name == PROBE_FILE || (name.starts_with("wss_") && name.ends_with(".csv")) {
            fs::remove_file(entry.path())?;
        }
    }
    Ok(())
}

/// Runs the instance described by `dir/run.toml` and `dir/waveform.csv`,
/// writing probe and WSS files next to them.
pub fn run_instance(dir: &Path, domain: &LatticeDomain, threads: usize) -> Result<InstanceOutcome, String> {
    let meta = RunMeta::read(dir).map_err(|e| e.to_string())?;
    let waveform = read_waveform(&dir.join(WAVEFORM_FILE)).map_err(|e| e.to_string())?;
    clear_outputs(dir).map_err(|e| e.to_string())?;
    let profile: ProfileKind = meta.profile.parse()?;
    let schedule = schedule_from_waveform(&waveform, meta.steps, &meta.units, domain, profile, meta.warmup)
        .map_err(|e| e.to_string())?;
    let config = SolverConfig { threads: threads.max(1), ..SolverConfig::bgk(meta.units.tau) };
    let mut solver = Solver::new(domain.clone(), config).map_err(|e| describe(&e))?;
    let mut state = solver.initial_state(1.0, |_| [0.0; 3]);
    let plane = ProbePlane::before_outlet(domain, 0, meta.probe_offset_m).map_err(|e| e.to_string())?;
    let mut probe =
        ProbeRecorder::new(dir, domain, plane, meta.units, meta.probe_cadence).map_err(|e| e.to_string())?;
    let mut wss =
        WssRecorder::new(dir, domain, None, meta.units, meta.fluid, meta.wss_cadence).map_err(|e| e.to_string())?;
    let result =
        run(&mut solver, &mut state, &schedule, meta.steps, &mut [&mut probe, &mut wss]).map_err(|e| describe(&e))?;
    let mut artifacts: Vec<String> = result
        .artifacts
        .iter()
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .chain([META_FILE.to_string(), WAVEFORM_FILE.to_string()])
        .collect();
    artifacts.sort();
    artifacts.dedup();
    Ok(InstanceOutcome { steps: result.steps_run, artifacts, peak_wss: wss.peak })
}
