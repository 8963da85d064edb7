use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use super::manifest::{file_sha256, sha256_hex, Artifact, EnsembleManifest, Status};
use super::params::{generate_waveforms, prepare_runs};
use super::run::{write_run_input, Executor, InstanceOutcome};
use super::EnsembleError;
use crate::geometry::read_domain;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExecuteReport {
    pub completed: usize,
    pub failed: usize,
    /// Instances already complete with intact artifacts.
    pub skipped: usize,
    pub solver_steps: u64,
    pub peak_concurrency: usize,
    /// (label, diagnostic) for each failure of this invocation.
    pub failures: Vec<(String, String)>,
}

enum Event {
    Started(usize),
    Finished(usize, f64, Result<InstanceOutcome, String>),
}

/// True when every recorded artifact exists with its recorded checksum.
fn artifacts_intact(dir: &Path, artifacts: &[Artifact]) -> bool {
    !artifacts.is_empty()
        && artifacts.iter().all(|a| file_sha256(&dir.join(&a.name)).map(|h| h == a.sha256).unwrap_or(false))
}

/// Runs every instance of `manifest` that is not already complete, with at
/// most `workers` instances in flight. Instance failures are recorded in the
/// manifest and counted, never propagated.
pub fn execute(
    manifest: &mut EnsembleManifest,
    workdir: &Path,
    workers: usize,
    executor: &dyn Executor,
) -> Result<ExecuteReport, EnsembleError> {
    if workers == 0 {
        return Err(EnsembleError::InvalidParams("workers must be at least 1".into()));
    }
    let geometry_err =
        |reason: String| EnsembleError::GeometryUnreadable { path: manifest.geometry.display().to_string(), reason };
    let bytes = std::fs::read(&manifest.geometry).map_err(|e| geometry_err(e.to_string()))?;
    if sha256_hex(&bytes) != manifest.geometry_sha256 {
        return Err(EnsembleError::GeometryChanged(manifest.geometry.display().to_string()));
    }
    let domain = read_domain(&manifest.geometry).map_err(|e| geometry_err(e.to_string()))?;

    let mut report = ExecuteReport::default();
    let mut pending = Vec::new();
    for (k, inst) in manifest.instances.iter_mut().enumerate() {
        if inst.status == Status::Complete && artifacts_intact(&workdir.join(&inst.result_dir), &inst.artifacts) {
            report.skipped += 1;
        } else {
            inst.reset();
            pending.push(k);
        }
    }
    if pending.is_empty() {
        return Ok(report);
    }

    let configs = manifest.configs();
    let waves: Vec<_> = generate_waveforms(&configs)?.into_iter().map(|(w, _)| w).collect();
    let metas = prepare_runs(&configs, &waves, domain.voxel_size, &manifest.params)?;
    for &k in &pending {
        write_run_input(&workdir.join(&manifest.instances[k].result_dir), &metas[k], &waves[k])?;
    }
    manifest.save(workdir)?;

    let threads = manifest.params.threads_per_instance;
    let dirs: Vec<_> = manifest.instances.iter().map(|i| workdir.join(&i.result_dir)).collect();
    let next = AtomicUsize::new(0);
    let active = AtomicUsize::new(0);
    let peak = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel();

    std::thread::scope(|s| -> Result<(), EnsembleError> {
        for _ in 0..workers.min(pending.len()) {
            let tx = tx.clone();
            let (next, active, peak, pending, dirs, domain) = (&next, &active, &peak, &pending, &dirs, &domain);
            s.spawn(move || loop {
                let j = next.fetch_add(1, Ordering::SeqCst);
                let Some(&k) = pending.get(j) else { break };
                let now = active.fetch_add(1, Ordering::SeqCst) + 1;
                peak.fetch_max(now, Ordering::SeqCst);
                let _ = tx.send(Event::Started(k));
                let t0 = Instant::now();
                let out = executor.run(&dirs[k], domain, threads);
                active.fetch_sub(1, Ordering::SeqCst);
                let _ = tx.send(Event::Finished(k, t0.elapsed().as_secs_f64(), out));
            });
        }
        drop(tx);
        // Single writer: the manifest is only touched here.
        for ev in rx {
            match ev {
                Event::Started(k) => manifest.instances[k].transition(Status::Running)?,
                Event::Finished(k, wall, out) => {
                    let inst = &mut manifest.instances[k];
                    inst.wall_clock_s = Some(wall);
                    let hashed = out.and_then(|o| {
                        let artifacts = o
                            .artifacts
                            .iter()
                            .map(|name| {
                                file_sha256(&dirs[k].join(name))
                                    .map(|sha256| Artifact { name: name.clone(), sha256 })
                                    .map_err(|e| format!("artifact {name}: {e}"))
                            })
                            .collect::<Result<Vec<_>, _>>()?;
                        Ok((o.steps, artifacts))
                    });
                    match hashed {
                        Ok((steps, artifacts)) => {
                            inst.transition(Status::Complete)?;
                            inst.steps = Some(steps);
                            inst.artifacts = artifacts;
                            report.completed += 1;
                            report.solver_steps += steps;
                            log::info!("{} complete: {steps} steps in {wall:.1} s", inst.label());
                        }
                        Err(msg) => {
                            inst.transition(Status::Failed)?;
                            log::warn!("{} failed: {msg}", inst.label());
                            report.failures.push((inst.label().to_string(), msg.clone()));
                            inst.diagnostics = Some(msg);
                            report.failed += 1;
                        }
                    }
                }
            }
            manifest.save(workdir)?;
        }
        Ok(())
    })?;
    report.peak_concurrency = peak.load(Ordering::SeqCst);
    Ok(report)
}
