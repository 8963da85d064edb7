//! Command-line verbs. Each verb is a direct composition of library calls.
//!
//! | verb | does |
//! |---|---|
//! | `gen-waveforms` | inlet waveform CSV per config |
//! | `gen-lb` | run directories (`run.toml`, `waveform.csv`) per config |
//! | `run` | one prepared run directory |
//! | `collect` | verified copy of complete ensemble instances |
//! | `analyze` | cross-instance report over run directories |
//! | `ensemble` | plan, run, collect and report in one go |
//! | `voxelize` | domain file from an analytic shape |

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{CommandFactory, Parser, Subcommand, ValueEnum};

use crate::analysis::{cross_instance_report, load_instance, ReportStatus, DEFAULT_INTERVAL};
use crate::cardiac::{
    read_configs, read_waveform, reference_configs, write_waveform, CardiacError, PatientConfig, Waveform,
};
use crate::ensemble::{
    collect, desk_domain, generate_waveforms, pipeline, prepare_runs, run_instance, write_run_input, EnsembleManifest,
    LocalExecutor, SolverParams, RUNS_DIR,
};
use crate::geometry::{read_domain, voxelize_primitive, write_domain, Primitive};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "hemoflow",
    version,
    about = "Ensemble blood-flow pipeline: arterial network waveforms driving a lattice-Boltzmann solver"
)]
pub struct Cli {
    #[command(subcommand)]
    pub verb: Verb,
}

/// Solver settings: a TOML file and/or `key=value` overrides.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct ParamArgs {
    /// TOML file of solver parameters.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Override one parameter, e.g. `--set cycles=2` or `--set tau_overrides.vt70=0.5000001`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Shape {
    /// 2.8 mm tube, 8 voxels across, 16 long.
    Desk,
    Cylinder,
    Stenosis,
    Torus,
    Bifurcation,
}

#[derive(Debug, Subcommand)]
pub enum Verb {
    /// Write one inlet waveform CSV per config.
    GenWaveforms {
        /// Config file; the built-in seven-row exercise table when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Prepare a run directory per config under `<out>/runs/`.
    GenLb {
        /// Config file; the built-in seven-row exercise table when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        geometry: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Directory of `<label>.csv` waveforms; generated when absent.
        #[arg(long)]
        waveforms: Option<PathBuf>,
        #[command(flatten)]
        params: ParamArgs,
    },
    /// Run one prepared directory.
    Run {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        geometry: PathBuf,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Copy complete instances of an ensemble work directory into `ensemble_<id>/`.
    Collect {
        #[arg(long, default_value = ".")]
        workdir: PathBuf,
    },
    /// Cross-instance report over finished run directories.
    Analyze {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// WSS sampling interval, s.
        #[arg(long, default_value_t = DEFAULT_INTERVAL)]
        interval: f64,
    },
    /// Plan, execute, collect and report. Exit status is the failed instance count.
    Ensemble {
        /// Config file; the built-in seven-row exercise table when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        geometry: PathBuf,
        #[arg(long, default_value = ".")]
        workdir: PathBuf,
        #[arg(long, env = "HEMOFLOW_WORKERS", default_value_t = 1)]
        workers: usize,
        #[command(flatten)]
        params: ParamArgs,
    },
    /// Voxelize an analytic shape into a domain file.
    Voxelize {
        #[arg(long, value_enum)]
        shape: Shape,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3.5e-4)]
        voxel_size: f64,
        /// Tube radius, m.
        #[arg(long, default_value_t = 1.4e-3)]
        radius: f64,
        /// Tube length, m.
        #[arg(long, default_value_t = 5.6e-3)]
        length: f64,
        /// Fractional radius reduction at a stenosis throat.
        #[arg(long, default_value_t = 0.5)]
        severity: f64,
    },
}

type CliResult = Result<i32, Box<dyn std::error::Error>>;

/// Reads solver parameters, applying `--set` overrides before validation so
/// unknown keys are rejected.
pub fn load_params(args: &ParamArgs) -> Result<SolverParams, Box<dyn std::error::Error>> {
    let mut table: toml::Table = match &args.params {
        Some(p) => toml::from_str(&fs::read_to_string(p)?)?,
        None => toml::Table::new(),
    };
    for kv in &args.set {
        let (key, raw) = kv.split_once('=').ok_or_else(|| format!("expected KEY=VALUE, got {kv:?}"))?;
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        match key.split_once('.') {
            Some((outer, inner)) => {
                let entry = table.entry(outer).or_insert_with(|| toml::Value::Table(toml::Table::new()));
                entry.as_table_mut().ok_or_else(|| format!("{outer} is not a table"))?.insert(inner.into(), value);
            }
            None => {
                table.insert(key.into(), value);
            }
        }
    }
    Ok(SolverParams::from_toml(&toml::to_string(&table)?)?)
}

pub fn load_configs(path: Option<&Path>) -> Result<Vec<PatientConfig>, CardiacError> {
    match path {
        Some(p) => read_configs(p),
        None => Ok(reference_configs()),
    }
}

pub fn waveform_file(dir: &Path, label: &str) -> PathBuf {
    dir.join(format!("{label}.csv"))
}

fn shape_domain(
    shape: Shape,
    voxel_size: f64,
    radius: f64,
    length: f64,
    severity: f64,
) -> Result<crate::geometry::LatticeDomain, crate::geometry::GeometryError> {
    let p = match shape {
        Shape::Desk => return desk_domain(),
        Shape::Cylinder => Primitive::Cylinder { radius, length },
        Shape::Stenosis => Primitive::Stenosis { radius, length, severity, width: 2.0 * radius },
        Shape::Torus => {
            Primitive::TorusSegment { bend_radius: length, tube_radius: radius, angle: std::f64::consts::FRAC_PI_2 }
        }
        Shape::Bifurcation => Primitive::YBifurcation {
            parent_radius: radius,
            parent_length: length,
            daughter_radius: radius * 0.5f64.powf(1.0 / 3.0),
            daughter_length: length,
            half_angle: std::f64::consts::FRAC_PI_6,
        },
    };
    voxelize_primitive(&p, voxel_size)
}

fn run_verb(verb: Verb) -> CliResult {
    match verb {
        Verb::GenWaveforms { config, out } => {
            let configs = load_configs(config.as_deref())?;
            fs::create_dir_all(&out)?;
            for (c, (w, factor)) in configs.iter().zip(generate_waveforms(&configs)?) {
                write_waveform(&w, &waveform_file(&out, &c.label))?;
                println!("{}\tmean {:.4} m/s\tfactor {factor:.4}", c.label, w.mean());
            }
            Ok(0)
        }
        Verb::GenLb { config, geometry, out, waveforms, params } => {
            let configs = load_configs(config.as_deref())?;
            let params = load_params(&params)?;
            let domain = read_domain(&geometry)?;
            let waves: Vec<Waveform> = match waveforms {
                Some(dir) => {
                    configs.iter().map(|c| read_waveform(&waveform_file(&dir, &c.label))).collect::<Result<_, _>>()?
                }
                None => generate_waveforms(&configs)?.into_iter().map(|(w, _)| w).collect(),
            };
            for (meta, w) in prepare_runs(&configs, &waves, domain.voxel_size, &params)?.iter().zip(&waves) {
                let dir = out.join(RUNS_DIR).join(&meta.label);
                write_run_input(&dir, meta, w)?;
                println!("{}\t{} steps\t{}", meta.label, meta.steps, dir.display());
            }
            Ok(0)
        }
        Verb::Run { dir, geometry, threads } => {
            let domain = read_domain(&geometry)?;
            let o = run_instance(&dir, &domain, threads)?;
            println!("{} steps, peak WSS {:.4} Pa, {} artifacts", o.steps, o.peak_wss, o.artifacts.len());
            Ok(0)
        }
        Verb::Collect { workdir } => {
            let m = EnsembleManifest::load(&workdir)?;
            let c = collect(&m, &workdir)?;
            println!("collected {} into {}", c.collected.len(), c.dir.display());
            if !c.absent.is_empty() {
                println!("absent: {}", c.absent.join(","));
            }
            for i in &c.issues {
                eprintln!("{i}");
            }
            Ok(if c.issues.is_empty() { 0 } else { EXIT_RUNTIME })
        }
        Verb::Analyze { dirs, out, interval } => {
            let data = dirs.iter().map(|d| load_instance(d)).collect::<Result<Vec<_>, _>>()?;
            let labels: Vec<String> = data.iter().map(|d| d.meta.label.clone()).collect();
            let s = cross_instance_report(&data, &labels, &out, interval)?;
            println!(
                "mean WSS = {:.4} * inlet mean + {:.4} (R2 {:.5}); {} files in {}",
                s.mean_wss_fit.slope,
                s.mean_wss_fit.intercept,
                s.mean_wss_fit.r2,
                s.files.len(),
                out.display()
            );
            Ok(0)
        }
        Verb::Ensemble { config, geometry, workdir, workers, params } => {
            let configs = load_configs(config.as_deref())?;
            let params = load_params(&params)?;
            let o = pipeline(&configs, &geometry, &params, &workdir, workers, &LocalExecutor)?;
            let e = &o.execution;
            println!(
                "ensemble {}: {} run, {} skipped, {} failed, {} solver steps",
                o.manifest.id,
                e.completed,
                e.skipped,
                o.failed(),
                e.solver_steps
            );
            for (label, msg) in &e.failures {
                eprintln!("{label}: {msg}");
            }
            match o.report.as_ref().map(|r| &r.status) {
                Some(ReportStatus::Complete) => println!("report complete: {}", o.report_dir.display()),
                _ => println!("report partial: {}", o.report_dir.display()),
            }
            Ok(o.failed() as i32)
        }
        Verb::Voxelize { shape, out, voxel_size, radius, length, severity } => {
            let d = shape_domain(shape, voxel_size, radius, length, severity)?;
            write_domain(&d, &out)?;
            println!("{} sites, {} wall links -> {}", d.site_count(), d.wall_link_count(), out.display());
            Ok(0)
        }
    }
}

/// Parses `args` (program name first) and runs the verb, returning the exit
/// status: 0 success, 1 usage error, 2 runtime error, or for `ensemble` the
/// number of failed instances.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            if !e.use_stderr() {
                return 0;
            }
            // Parameter table of the verb, or the verb list.
            let mut cmd = Cli::command();
            let verb = args.get(1).and_then(|v| v.to_str()).unwrap_or_default();
            let help = match cmd.find_subcommand_mut(verb) {
                Some(sub) => sub.render_help(),
                None => cmd.render_help(),
            };
            eprintln!("\n{help}");
            return EXIT_USAGE;
        }
    };
    match run_verb(cli.verb) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}
