use std::path::PathBuf;

use rayon::prelude::*;

use super::d3q19::{equilibrium_into, opposite, C, Q, W};
use super::LbmError;
use crate::geometry::{Coord, IoletKind, IoletRef, LatticeDomain, Link};
use crate::units::MACH_LIMIT;

/// Sites per parallel work item.
const BLOCK: usize = 2048;

/// Collision operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Collision {
    /// Single-relaxation-time BGK.
    Bgk { tau: f64 },
}

impl Collision {
    pub fn tau(&self) -> f64 {
        match *self {
            Collision::Bgk { tau } => tau,
        }
    }
}

/// How fluid-to-solid links are closed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WallTreatment {
    /// Linear interpolated bounce-back using the stored wall fractions.
    Bouzidi,
    /// Half-way bounce-back, ignoring wall fractions.
    SimpleBounceBack,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub collision: Collision,
    pub wall: WallTreatment,
    /// Uniform body force density, lattice units.
    pub body_force: [f64; 3],
    /// Wrap neighbor lookups around the grid along each axis.
    pub periodic: [bool; 3],
    /// Worker threads; 0 uses the global pool size.
    pub threads: usize,
}

impl SolverConfig {
    pub fn bgk(tau: f64) -> Self {
        Self {
            collision: Collision::Bgk { tau },
            wall: WallTreatment::Bouzidi,
            body_force: [0.0; 3],
            periodic: [false; 3],
            threads: 1,
        }
    }
}

/// Imposed inlet velocity: a per-site shape scaled by a per-step mean.
#[derive(Debug, Clone, PartialEq)]
pub struct InletDrive {
    /// Lattice velocity per inlet site for a unit mean, in the inlet's site order.
    pub shape: Vec<[f64; 3]>,
    /// Mean lattice speed at each step index `0..=n_steps`.
    pub mean: Vec<f64>,
}

impl InletDrive {
    pub fn velocity(&self, slot: usize, step: u64) -> [f64; 3] {
        let m = self.mean[step as usize];
        let s = self.shape[slot];
        [s[0] * m, s[1] * m, s[2] * m]
    }
}

/// Time-dependent boundary data for one run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BoundarySchedule {
    pub inlets: Vec<InletDrive>,
    /// Lattice density held at each outlet (1 is zero gauge pressure).
    pub outlet_density: Vec<f64>,
}

impl BoundarySchedule {
    /// Last step index covered by every inlet series.
    pub fn last_step(&self) -> u64 {
        self.inlets.iter().map(|d| d.mean.len().saturating_sub(1) as u64).min().unwrap_or(u64::MAX)
    }
}

/// Populations and cached moments for every fluid site.
#[derive(Debug, Clone, PartialEq)]
pub struct LbState {
    /// Site-major populations, `f[site * 19 + i]`.
    pub f: Vec<f64>,
    pub step: u64,
    pub rho: Vec<f64>,
    pub vel: Vec<[f64; 3]>,
}

impl LbState {
    pub fn site_count(&self) -> usize {
        self.rho.len()
    }

    pub fn populations(&self, site: usize) -> &[f64] {
        &self.f[site * Q..(site + 1) * Q]
    }

    /// Sum of densities in canonical site order.
    pub fn total_mass(&self) -> f64 {
        self.f.iter().sum()
    }

    pub fn max_speed(&self) -> f64 {
        self.vel.iter().map(norm).fold(0.0, f64::max)
    }
}

#[inline(always)]
fn norm(u: &[f64; 3]) -> f64 {
    (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt()
}

#[derive(Debug, Clone, Copy)]
struct WallFix {
    dst: usize,
    src_a: usize,
    a: f64,
    src_b: usize,
    b: f64,
}

#[derive(Debug, Clone)]
struct IoletSite {
    site: usize,
    /// Incoming directions whose upstream lies beyond the plane.
    unknown: Vec<usize>,
    /// Neighbor one step into the fluid, for zero-gradient outlets.
    interior: Option<usize>,
}

/// Compiled solver for one domain.
pub struct Solver {
    domain: LatticeDomain,
    config: SolverConfig,
    src: Vec<u32>,
    walls: Vec<WallFix>,
    inlets: Vec<Vec<IoletSite>>,
    outlets: Vec<Vec<IoletSite>>,
    post: Vec<f64>,
    pool: Option<rayon::ThreadPool>,
}

impl Solver {
    pub fn new(domain: LatticeDomain, config: SolverConfig) -> Result<Self, LbmError> {
        let tau = config.collision.tau();
        if !(tau > 0.5) || !tau.is_finite() {
            return Err(LbmError::Config(format!("relaxation time {tau} must exceed 0.5")));
        }
        let n = domain.site_count();
        if n * Q >= u32::MAX as usize {
            return Err(LbmError::Config("domain too large".into()));
        }
        let periodic = config.periodic;
        let wrap = |coord: Coord, i: usize| -> Option<usize> {
            let mut out = [0u32; 3];
            for d in 0..3 {
                let dim = domain.dims[d] as i64;
                let mut v = coord[d] as i64 + C[i][d] as i64;
                if periodic[d] {
                    v = v.rem_euclid(dim);
                } else if v < 0 || v >= dim {
                    return None;
                }
                out[d] = v as u32;
            }
            domain.site_index(out)
        };

        let mut src = vec![0u32; n * Q];
        let mut walls = Vec::new();
        let mut inlet_sites: Vec<Vec<IoletSite>> = vec![Vec::new(); domain.inlets.len()];
        let mut outlet_sites: Vec<Vec<IoletSite>> = vec![Vec::new(); domain.outlets.len()];

        for s in 0..n {
            let coord = domain.sites()[s].coord;
            let mut unknown = Vec::new();
            let mut iolet = None;
            for i in 0..Q {
                // Pull: f_i(x) comes from x - c_i, i.e. the neighbor along opposite(i).
                let o = opposite(i);
                src[s * Q + i] = (s * Q + i) as u32;
                if i == 0 {
                    continue;
                }
                if let Some(up) = wrap(coord, o) {
                    src[s * Q + i] = (up * Q + i) as u32;
                    continue;
                }
                match domain.link(s, o) {
                    Link::Fluid(_) => unreachable!("non-periodic fluid link handled above"),
                    Link::Wall(q) => {
                        // Population o leaves toward the wall and returns as i.
                        let q = match config.wall {
                            WallTreatment::Bouzidi => q as f64,
                            WallTreatment::SimpleBounceBack => 0.5,
                        };
                        let fix = if q < 0.5 {
                            match wrap(coord, i) {
                                Some(back) => WallFix {
                                    dst: s * Q + i,
                                    src_a: s * Q + o,
                                    a: 2.0 * q,
                                    src_b: back * Q + o,
                                    b: 1.0 - 2.0 * q,
                                },
                                None => WallFix {
                                    dst: s * Q + i,
                                    src_a: s * Q + o,
                                    a: 2.0 * q,
                                    src_b: s * Q + i,
                                    b: 1.0 - 2.0 * q,
                                },
                            }
                        } else {
                            WallFix {
                                dst: s * Q + i,
                                src_a: s * Q + o,
                                a: 1.0 / (2.0 * q),
                                src_b: s * Q + i,
                                b: (2.0 * q - 1.0) / (2.0 * q),
                            }
                        };
                        walls.push(fix);
                    }
                    Link::Iolet(r) => {
                        unknown.push(i);
                        iolet = Some(r);
                    }
                }
            }
            if let Some(r) = iolet {
                let interior = interior_neighbor(&domain, s, r).and_then(|d| wrap(coord, d));
                let entry = IoletSite { site: s, unknown, interior };
                match r.kind {
                    IoletKind::VelocityInlet => inlet_sites[r.index].push(entry),
                    IoletKind::PressureOutlet => outlet_sites[r.index].push(entry),
                }
            }
        }
        // Extrapolation source must itself be an interior site.
        let is_iolet: std::collections::HashSet<usize> =
            inlet_sites.iter().chain(&outlet_sites).flatten().map(|e| e.site).collect();
        for e in inlet_sites.iter_mut().chain(outlet_sites.iter_mut()).flatten() {
            if e.interior.is_some_and(|k| is_iolet.contains(&k)) {
                e.interior = None;
            }
        }

        let pool = if config.threads > 0 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(config.threads)
                    .build()
                    .map_err(|e| LbmError::Config(e.to_string()))?,
            )
        } else {
            None
        };

        Ok(Self {
            domain,
            config,
            src,
            walls,
            inlets: inlet_sites,
            outlets: outlet_sites,
            post: vec![0.0; n * Q],
            pool,
        })
    }

    pub fn domain(&self) -> &LatticeDomain {
        &self.domain
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn tau(&self) -> f64 {
        self.config.collision.tau()
    }

    /// Sites of inlet `k` in the order expected by [`InletDrive::shape`].
    pub fn inlet_sites(&self, k: usize) -> Vec<usize> {
        self.inlets[k].iter().map(|e| e.site).collect()
    }

    pub fn outlet_sites(&self, k: usize) -> Vec<usize> {
        self.outlets[k].iter().map(|e| e.site).collect()
    }

    pub fn inlet_count(&self) -> usize {
        self.inlets.len()
    }

    /// Equilibrium state at density `rho0` with a per-site velocity.
    pub fn initial_state(&self, rho0: f64, velocity: impl Fn(usize) -> [f64; 3]) -> LbState {
        let n = self.domain.site_count();
        let mut f = vec![0.0; n * Q];
        let mut rho = vec![rho0; n];
        let mut vel = vec![[0.0; 3]; n];
        let mut feq = [0.0; Q];
        for s in 0..n {
            let u = velocity(s);
            equilibrium_into(rho0, u, &mut feq);
            f[s * Q..(s + 1) * Q].copy_from_slice(&feq);
            rho[s] = rho0;
            vel[s] = u;
        }
        LbState { f, step: 0, rho, vel }
    }

    /// Checks that `schedule` matches this lattice's inlets and covers `last` steps.
    pub fn check_schedule(&self, schedule: &BoundarySchedule, last: u64) -> Result<(), LbmError> {
        for (k, sites) in self.inlets.iter().enumerate() {
            if sites.is_empty() {
                continue;
            }
            let drive = schedule.inlets.get(k).ok_or(LbmError::ProfileMismatch {
                inlet: k,
                expected: sites.len(),
                found: 0,
            })?;
            if drive.shape.len() != sites.len() {
                return Err(LbmError::ProfileMismatch { inlet: k, expected: sites.len(), found: drive.shape.len() });
            }
            let available = drive.mean.len().saturating_sub(1) as u64;
            if available < last {
                return Err(LbmError::ScheduleTooShort { needed: last, available });
            }
        }
        Ok(())
    }

    /// Advances `state` by one collide-stream-boundary cycle.
    pub fn step(&mut self, state: &mut LbState, schedule: &BoundarySchedule) -> Result<(), LbmError> {
        let next = state.step + 1;
        self.check_schedule(schedule, next)?;
        let Self { config, src, post, walls, pool, .. } = self;
        let collision = config.collision;
        let force = config.body_force;
        let mut kernel = || {
            collide(&state.f, &state.rho, &state.vel, post, collision, force);
            stream(&mut state.f, post, src);
        };
        match pool {
            Some(p) => p.install(kernel),
            None => kernel(),
        }

        for w in walls.iter() {
            state.f[w.dst] = w.a * post[w.src_a] + w.b * post[w.src_b];
        }
        self.reconstruct_iolets(state, schedule, next);

        let force = self.config.body_force;
        let moments_kernel = |state: &mut LbState| update_moments(&state.f, &mut state.rho, &mut state.vel, force);
        match &self.pool {
            Some(p) => p.install(|| moments_kernel(state)),
            None => moments_kernel(state),
        }
        self.regularize_iolets(state, schedule, next);
        state.step = next;
        self.check_stability(state)
    }

    /// Fills populations entering from beyond inlet/outlet planes by
    /// non-equilibrium bounce-back against the local target velocity.
    fn reconstruct_iolets(&self, state: &mut LbState, schedule: &BoundarySchedule, next: u64) {
        for (k, sites) in self.inlets.iter().enumerate() {
            for (slot, e) in sites.iter().enumerate() {
                let u = schedule.inlets[k].velocity(slot, next);
                let rho = state.rho[e.site];
                for &i in &e.unknown {
                    let cu = C[i][0] as f64 * u[0] + C[i][1] as f64 * u[1] + C[i][2] as f64 * u[2];
                    state.f[e.site * Q + i] = self.post[e.site * Q + opposite(i)] + 6.0 * W[i] * rho * cu;
                }
            }
        }
        for sites in &self.outlets {
            for e in sites {
                let u = state.vel[e.site];
                let rho = state.rho[e.site];
                for &i in &e.unknown {
                    let cu = C[i][0] as f64 * u[0] + C[i][1] as f64 * u[1] + C[i][2] as f64 * u[2];
                    state.f[e.site * Q + i] = self.post[e.site * Q + opposite(i)] + 6.0 * W[i] * rho * cu;
                }
            }
        }
    }

    /// Resets iolet sites. Inlets take the imposed-velocity equilibrium plus the
    /// non-equilibrium part of their interior neighbour; outlets are set to
    /// equilibrium at the outlet density with the interior velocity.
    fn regularize_iolets(&self, state: &mut LbState, schedule: &BoundarySchedule, next: u64) {
        let mut feq_have = [0.0; Q];
        let mut feq_want = [0.0; Q];
        for (k, sites) in self.inlets.iter().enumerate() {
            for (slot, e) in sites.iter().enumerate() {
                let s = e.site;
                let target = schedule.inlets[k].velocity(slot, next);
                match e.interior {
                    Some(n) => {
                        // Imposed equilibrium plus the neighbour's non-equilibrium part.
                        let rho = state.rho[n];
                        equilibrium_into(rho, state.vel[n], &mut feq_have);
                        equilibrium_into(rho, target, &mut feq_want);
                        for i in 0..Q {
                            state.f[s * Q + i] = feq_want[i] + state.f[n * Q + i] - feq_have[i];
                        }
                        state.rho[s] = rho;
                    }
                    None => {
                        let rho = state.rho[s];
                        equilibrium_into(rho, state.vel[s], &mut feq_have);
                        equilibrium_into(rho, target, &mut feq_want);
                        for i in 0..Q {
                            state.f[s * Q + i] += feq_want[i] - feq_have[i];
                        }
                    }
                }
                state.vel[s] = target;
            }
        }
        for (k, sites) in self.outlets.iter().enumerate() {
            let rho_out = schedule.outlet_density.get(k).copied().unwrap_or(1.0);
            for e in sites {
                let s = e.site;
                let target = match e.interior {
                    Some(n) => state.vel[n],
                    None => state.vel[s],
                };
                equilibrium_into(rho_out, target, &mut feq_want);
                state.f[s * Q..(s + 1) * Q].copy_from_slice(&feq_want);
                state.rho[s] = rho_out;
                state.vel[s] = target;
            }
        }
    }

    fn check_stability(&self, state: &LbState) -> Result<(), LbmError> {
        for s in 0..state.rho.len() {
            let rho = state.rho[s];
            let speed = norm(&state.vel[s]);
            if !(rho > 0.0) || !rho.is_finite() || !(speed < MACH_LIMIT) {
                return Err(LbmError::Diverged {
                    step: state.step,
                    coord: self.domain.sites()[s].coord,
                    max_velocity: state.max_speed(),
                    rho,
                });
            }
        }
        Ok(())
    }
}

/// Preferred lattice direction pointing from an iolet site into the fluid.
fn interior_neighbor(domain: &LatticeDomain, site: usize, r: IoletRef) -> Option<usize> {
    let inward = -domain.iolet(r).normal;
    let mut best = None;
    let mut best_dot = 0.0;
    for i in 1..Q {
        let c = nalgebra::Vector3::new(C[i][0] as f64, C[i][1] as f64, C[i][2] as f64);
        let d = c.normalize().dot(&inward);
        if d > best_dot + 1e-12 {
            best_dot = d;
            best = Some(i);
        }
    }
    best.filter(|&i| matches!(domain.link(site, i), Link::Fluid(_)))
}

fn collide(f: &[f64], rho: &[f64], vel: &[[f64; 3]], post: &mut [f64], collision: Collision, force: [f64; 3]) {
    let omega = 1.0 / collision.tau();
    let forced = force != [0.0; 3];
    let pref = 1.0 - 0.5 * omega;
    post.par_chunks_mut(BLOCK * Q).enumerate().for_each(|(b, out)| {
        let base = b * BLOCK;
        let mut feq = [0.0; Q];
        for (k, site_out) in out.chunks_exact_mut(Q).enumerate() {
            let s = base + k;
            let u = vel[s];
            equilibrium_into(rho[s], u, &mut feq);
            let fin = &f[s * Q..s * Q + Q];
            for i in 0..Q {
                site_out[i] = fin[i] - omega * (fin[i] - feq[i]);
            }
            if forced {
                for i in 0..Q {
                    let c = [C[i][0] as f64, C[i][1] as f64, C[i][2] as f64];
                    let cu = c[0] * u[0] + c[1] * u[1] + c[2] * u[2];
                    let mut term = 0.0;
                    for d in 0..3 {
                        term += (3.0 * (c[d] - u[d]) + 9.0 * cu * c[d]) * force[d];
                    }
                    site_out[i] += pref * W[i] * term;
                }
            }
        }
    });
}

fn stream(f: &mut [f64], post: &[f64], src: &[u32]) {
    f.par_chunks_mut(BLOCK * Q).zip(src.par_chunks(BLOCK * Q)).for_each(|(out, idx)| {
        for (o, &j) in out.iter_mut().zip(idx) {
            *o = post[j as usize];
        }
    });
}

fn update_moments(f: &[f64], rho: &mut [f64], vel: &mut [[f64; 3]], force: [f64; 3]) {
    rho.par_chunks_mut(BLOCK).zip(vel.par_chunks_mut(BLOCK)).enumerate().for_each(|(b, (r, v))| {
        let base = b * BLOCK;
        for k in 0..r.len() {
            let s = base + k;
            let fs = &f[s * Q..s * Q + Q];
            let mut m = 0.0;
            let mut j = [0.0; 3];
            for i in 0..Q {
                m += fs[i];
                j[0] += C[i][0] as f64 * fs[i];
                j[1] += C[i][1] as f64 * fs[i];
                j[2] += C[i][2] as f64 * fs[i];
            }
            r[k] = m;
            v[k] = [(j[0] + 0.5 * force[0]) / m, (j[1] + 0.5 * force[1]) / m, (j[2] + 0.5 * force[2]) / m];
        }
    });
}

/// Observer called on a quiesced state every `cadence` steps.
pub trait StepObserver {
    fn cadence(&self) -> u64;
    /// Returns paths of any artifacts written.
    fn observe(&mut self, solver: &Solver, state: &LbState) -> Result<Vec<PathBuf>, String>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub steps_run: u64,
    pub final_step: u64,
    pub events: u64,
    pub max_speed: f64,
    pub total_mass: f64,
    pub artifacts: Vec<PathBuf>,
}

/// Runs `n_steps` steps, calling each observer after every step that is a
/// multiple of its cadence.
pub fn run(
    solver: &mut Solver,
    state: &mut LbState,
    schedule: &BoundarySchedule,
    n_steps: u64,
    observers: &mut [&mut dyn StepObserver],
) -> Result<RunResult, LbmError> {
    if n_steps == 0 {
        return Err(LbmError::NoSteps);
    }
    solver.check_schedule(schedule, state.step + n_steps)?;
    let mut events = 0;
    let mut artifacts = Vec::new();
    for _ in 0..n_steps {
        solver.step(state, schedule)?;
        for obs in observers.iter_mut() {
            let cadence = obs.cadence();
            if cadence > 0 && state.step.is_multiple_of(cadence) {
                let paths =
                    obs.observe(solver, state).map_err(|message| LbmError::Hook { step: state.step, message })?;
                artifacts.extend(paths);
                events += 1;
            }
        }
    }
    Ok(RunResult {
        steps_run: n_steps,
        final_step: state.step,
        events,
        max_speed: state.max_speed(),
        total_mass: state.total_mass(),
        artifacts,
    })
}
