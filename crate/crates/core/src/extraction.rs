//! In-run measurements: plane probes, plane flux and wall shear stress, plus
//! observers that write them to CSV at a fixed step cadence.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Coord, LatticeDomain, SiteKind, Surface};
use crate::lbm::d3q19::{equilibrium_into, opposite, C, Q};
use crate::lbm::{LbState, Solver, StepObserver};
use crate::units::{to_physical_pressure, to_physical_stress, FluidProperties, LatticeUnits};

pub const PROBE_FILE: &str = "probe.csv";
pub const PROBE_HEADER: &str = "step,t_s,v_max_m_s,v_mean_m_s,p_mean_pa";
pub const WSS_HEADER: &str = "x,y,z,wss_pa";
pub const META_FILE: &str = "run.toml";

#[derive(Debug, Error)]
pub enum ExtractionError {
    #[error("probe plane contains no fluid sites")]
    EmptyPlane,
    #[error("outlet {0} does not exist")]
    UnknownOutlet(usize),
    #[error("run metadata: {0}")]
    Meta(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Description of one solver run, stored next to its extraction files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub label: String,
    pub intensity_pct_vt: f64,
    pub heart_rate_bpm: f64,
    pub steps: u64,
    pub probe_cadence: u64,
    pub wss_cadence: u64,
    /// Inlet ramped from zero over the first half cycle.
    pub warmup: bool,
    pub profile: String,
    /// Probe plane distance upstream of the first outlet, m.
    pub probe_offset_m: f64,
    pub units: LatticeUnits,
    pub fluid: FluidProperties,
}

impl RunMeta {
    pub fn period(&self) -> f64 {
        60.0 / self.heart_rate_bpm
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, ExtractionError> {
        let path = dir.join(META_FILE);
        let text = toml::to_string(self).map_err(|e| ExtractionError::Meta(e.to_string()))?;
        fs::write(&path, text)?;
        Ok(path)
    }

    pub fn read(dir: &Path) -> Result<Self, ExtractionError> {
        let text = fs::read_to_string(dir.join(META_FILE))?;
        toml::from_str(&text).map_err(|e| ExtractionError::Meta(e.to_string()))
    }
}

/// A measurement plane in physical coordinates. Velocities are projected on
/// `normal`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbePlane {
    pub point: Vector3<f64>,
    pub normal: Vector3<f64>,
}

impl ProbePlane {
    pub fn new(point: Vector3<f64>, normal: Vector3<f64>) -> Self {
        Self { point, normal: normal.normalize() }
    }

    /// Plane `distance` metres upstream of an outlet, facing downstream.
    pub fn before_outlet(domain: &LatticeDomain, outlet: usize, distance: f64) -> Result<Self, ExtractionError> {
        let o = domain.outlets.get(outlet).ok_or(ExtractionError::UnknownOutlet(outlet))?;
        Ok(Self::new(o.center - o.normal * distance, o.normal))
    }

    /// Fluid sites within half a voxel of the plane. A plane through cell
    /// faces selects the single layer on the downstream side.
    pub fn sites(&self, domain: &LatticeDomain) -> Vec<usize> {
        (0..domain.site_count())
            .filter(|&s| {
                let d = (domain.position(domain.sites()[s].coord) - self.point).dot(&self.normal);
                let x = d / domain.voxel_size - 1e-9;
                x > -0.5 && x <= 0.5
            })
            .collect()
    }
}

/// One probe event in physical units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeRecord {
    pub step: u64,
    pub t: f64,
    /// Largest speed over the plane sites, m/s.
    pub v_max: f64,
    /// Mean velocity component along the plane normal, m/s.
    pub v_mean: f64,
    /// Mean gauge pressure, Pa.
    pub p_mean: f64,
}

pub fn probe_plane(
    state: &LbState,
    sites: &[usize],
    plane: &ProbePlane,
    units: &LatticeUnits,
) -> Result<ProbeRecord, ExtractionError> {
    if sites.is_empty() {
        return Err(ExtractionError::EmptyPlane);
    }
    let n = plane.normal;
    let (mut vmax, mut vsum, mut rsum) = (0.0f64, 0.0, 0.0);
    for &s in sites {
        let u = state.vel[s];
        vmax = vmax.max((u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt());
        vsum += u[0] * n.x + u[1] * n.y + u[2] * n.z;
        rsum += state.rho[s];
    }
    let count = sites.len() as f64;
    Ok(ProbeRecord {
        step: state.step,
        t: units.time_of(state.step),
        v_max: vmax * units.velocity_scale,
        v_mean: vsum / count * units.velocity_scale,
        p_mean: to_physical_pressure(rsum / count, units),
    })
}

/// Volumetric flux through the plane sites along the plane normal, m³/s.
/// Uses momentum density over the reference density, the quantity the
/// lattice conserves.
pub fn plane_flux(state: &LbState, sites: &[usize], plane: &ProbePlane, units: &LatticeUnits) -> f64 {
    let n = plane.normal;
    let lattice: f64 = sites
        .iter()
        .map(|&s| {
            let u = state.vel[s];
            state.rho[s] * (u[0] * n.x + u[1] * n.y + u[2] * n.z)
        })
        .sum();
    lattice * units.velocity_scale * units.dx * units.dx
}

/// Volumetric flux carried by the populations that crossed `plane` in the
/// last stream step, m³/s at reference density. Only links between fluid
/// sites count; with `radius`, both ends must lie within that distance of
/// the line through `plane.point` along the normal. Unlike [`plane_flux`]
/// this is exact for any plane orientation, so at steady state it is the
/// same on every cut of a branch.
pub fn link_flux(
    state: &LbState,
    domain: &LatticeDomain,
    plane: &ProbePlane,
    radius: Option<f64>,
    units: &LatticeUnits,
) -> f64 {
    let n = plane.normal;
    let offset = |s: usize| domain.position(domain.sites()[s].coord) - plane.point;
    let inside = |r: &Vector3<f64>| radius.is_none_or(|rad| (r - n * r.dot(&n)).norm() <= rad);
    let mut net = 0.0;
    for y in 0..domain.site_count() {
        let ry = offset(y);
        if !inside(&ry) {
            continue;
        }
        let dy = ry.dot(&n) > 0.0;
        let coord = domain.sites()[y].coord;
        for i in 1..Q {
            // Population i at y arrived from y - c_i.
            let Some(x) = domain.neighbor_index(coord, opposite(i)) else { continue };
            let rx = offset(x);
            if !inside(&rx) || (rx.dot(&n) > 0.0) == dy {
                continue;
            }
            let f = state.f[y * Q + i];
            net += if dy { f } else { -f };
        }
    }
    net * units.dx.powi(3) / units.dt
}

/// A wall-adjacent fluid site with its outward wall normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WallSite {
    pub site: usize,
    pub coord: Coord,
    pub normal: Vector3<f64>,
}

/// Wall sites in coordinate order, excluding iolet sites. Normals come from
/// `surface` when given, otherwise from the wall-link directions.
pub fn wall_sites(domain: &LatticeDomain, surface: Option<&dyn Surface>) -> Vec<WallSite> {
    let mut out: Vec<WallSite> = domain
        .wall_sites()
        .filter(|&s| domain.sites()[s].kind == SiteKind::WallFluid)
        .filter_map(|s| {
            let coord = domain.sites()[s].coord;
            let normal = match surface {
                Some(surf) => {
                    let n = surf.normal(&domain.position(coord));
                    (n.norm() > 0.5).then_some(n)
                }
                None => domain.link_normal(s),
            }?;
            Some(WallSite { site: s, coord, normal })
        })
        .collect();
    out.sort_by_key(|w| [w.coord[2], w.coord[1], w.coord[0]]);
    out
}

/// Deviatoric stress at one site in lattice units, from the non-equilibrium populations.
pub fn site_stress(state: &LbState, site: usize, tau: f64) -> [[f64; 3]; 3] {
    let mut feq = [0.0; Q];
    equilibrium_into(state.rho[site], state.vel[site], &mut feq);
    let f = state.populations(site);
    let mut pi = [[0.0; 3]; 3];
    for i in 0..Q {
        let fneq = f[i] - feq[i];
        for a in 0..3 {
            for b in 0..3 {
                pi[a][b] += fneq * (C[i][a] * C[i][b]) as f64;
            }
        }
    }
    let k = -(1.0 - 0.5 / tau);
    pi.map(|row| row.map(|v| k * v))
}

/// Magnitude of the tangential part of the traction `sigma · n`.
pub fn tangential_traction(sigma: &[[f64; 3]; 3], n: &Vector3<f64>) -> f64 {
    let t = Vector3::new(
        sigma[0][0] * n.x + sigma[0][1] * n.y + sigma[0][2] * n.z,
        sigma[1][0] * n.x + sigma[1][1] * n.y + sigma[1][2] * n.z,
        sigma[2][0] * n.x + sigma[2][1] * n.y + sigma[2][2] * n.z,
    );
    (t - n * t.dot(n)).norm()
}

/// Wall shear stress in Pa at each of `walls`, in the same order.
pub fn wall_shear_stress(
    state: &LbState,
    walls: &[WallSite],
    tau: f64,
    units: &LatticeUnits,
    fluid: &FluidProperties,
) -> Vec<f64> {
    walls
        .iter()
        .map(|w| to_physical_stress(tangential_traction(&site_stress(state, w.site, tau), &w.normal), units, fluid))
        .collect()
}

pub fn format_probe_row(r: &ProbeRecord) -> String {
    format!("{},{:.9e},{:.9e},{:.9e},{:.9e}", r.step, r.t, r.v_max, r.v_mean, r.p_mean)
}

pub fn parse_probe_csv(text: &str) -> Result<Vec<ProbeRecord>, String> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(PROBE_HEADER) {
        return Err("missing probe header".into());
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let v: Vec<&str> = l.split(',').collect();
            if v.len() != 5 {
                return Err(format!("bad probe row {l:?}"));
            }
            let num = |k: usize| v[k].trim().parse::<f64>().map_err(|_| format!("bad probe row {l:?}"));
            Ok(ProbeRecord {
                step: v[0].trim().parse().map_err(|_| format!("bad probe row {l:?}"))?,
                t: num(1)?,
                v_max: num(2)?,
                v_mean: num(3)?,
                p_mean: num(4)?,
            })
        })
        .collect()
}

pub fn wss_file_name(step: u64) -> String {
    format!("wss_{step}.csv")
}

pub fn format_wss(walls: &[WallSite], values: &[f64]) -> String {
    let mut out = String::with_capacity(32 * walls.len() + 16);
    out.push_str(WSS_HEADER);
    out.push('\n');
    for (w, v) in walls.iter().zip(values) {
        let _ = writeln!(out, "{},{},{},{:.9e}", w.coord[0], w.coord[1], w.coord[2], v);
    }
    out
}

/// Parses a WSS event file into `(coord, wss)` rows.
pub fn parse_wss_csv(text: &str) -> Result<Vec<(Coord, f64)>, String> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(WSS_HEADER) {
        return Err("missing wss header".into());
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let v: Vec<&str> = l.split(',').map(str::trim).collect();
            let bad = || format!("bad wss row {l:?}");
            if v.len() != 4 {
                return Err(bad());
            }
            let c = |k: usize| v[k].parse::<u32>().map_err(|_| bad());
            Ok(([c(0)?, c(1)?, c(2)?], v[3].parse::<f64>().map_err(|_| bad())?))
        })
        .collect()
}

/// Appends a probe record to `probe.csv` every `cadence` steps.
pub struct ProbeRecorder {
    cadence: u64,
    plane: ProbePlane,
    sites: Vec<usize>,
    units: LatticeUnits,
    path: PathBuf,
    out: BufWriter<File>,
    pub records: Vec<ProbeRecord>,
}

impl ProbeRecorder {
    pub fn new(
        dir: &Path,
        domain: &LatticeDomain,
        plane: ProbePlane,
        units: LatticeUnits,
        cadence: u64,
    ) -> Result<Self, ExtractionError> {
        let sites = plane.sites(domain);
        if sites.is_empty() {
            return Err(ExtractionError::EmptyPlane);
        }
        fs::create_dir_all(dir)?;
        let path = dir.join(PROBE_FILE);
        let mut out = BufWriter::new(File::create(&path)?);
        writeln!(out, "{PROBE_HEADER}")?;
        out.flush()?;
        Ok(Self { cadence, plane, sites, units, path, out, records: Vec::new() })
    }

    pub fn site_count(&self) -> usize {
        self.sites.len()
    }
}

impl StepObserver for ProbeRecorder {
    fn cadence(&self) -> u64 {
        self.cadence
    }

    fn observe(&mut self, _: &Solver, state: &LbState) -> Result<Vec<PathBuf>, String> {
        let r = probe_plane(state, &self.sites, &self.plane, &self.units).map_err(|e| e.to_string())?;
        writeln!(self.out, "{}", format_probe_row(&r)).and_then(|_| self.out.flush()).map_err(|e| e.to_string())?;
        self.records.push(r);
        Ok(if self.records.len() == 1 { vec![self.path.clone()] } else { vec![] })
    }
}

/// Writes `wss_<step>.csv` every `cadence` steps.
pub struct WssRecorder {
    cadence: u64,
    dir: PathBuf,
    walls: Vec<WallSite>,
    units: LatticeUnits,
    fluid: FluidProperties,
    pub peak: f64,
}

impl WssRecorder {
    pub fn new(
        dir: &Path,
        domain: &LatticeDomain,
        surface: Option<&dyn Surface>,
        units: LatticeUnits,
        fluid: FluidProperties,
        cadence: u64,
    ) -> Result<Self, ExtractionError> {
        fs::create_dir_all(dir)?;
        Ok(Self { cadence, dir: dir.to_path_buf(), walls: wall_sites(domain, surface), units, fluid, peak: 0.0 })
    }

    pub fn walls(&self) -> &[WallSite] {
        &self.walls
    }
}

impl StepObserver for WssRecorder {
    fn cadence(&self) -> u64 {
        self.cadence
    }

    fn observe(&mut self, solver: &Solver, state: &LbState) -> Result<Vec<PathBuf>, String> {
        let values = wall_shear_stress(state, &self.walls, solver.tau(), &self.units, &self.fluid);
        self.peak = values.iter().copied().fold(self.peak, f64::max);
        let path = self.dir.join(wss_file_name(state.step));
        fs::write(&path, format_wss(&self.walls, &values)).map_err(|e| e.to_string())?;
        Ok(vec![path])
    }
}
