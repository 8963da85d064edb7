use std::path::PathBuf;

use super::d3q19::{Q, W};
use super::*;
use crate::geometry::{
    voxelize, voxelize_primitive, IoletKind, IoletRef, LatticeDomain, Primitive, Site, SiteKind, Vessel, WallLink,
};

fn no_inlets() -> BoundarySchedule {
    BoundarySchedule::default()
}

fn run_steps(solver: &mut Solver, state: &mut LbState, schedule: &BoundarySchedule, n: u64) {
    for _ in 0..n {
        solver.step(state, schedule).unwrap();
    }
}

#[test]
fn global_equilibrium_is_fixed_point() {
    let domain = LatticeDomain::full_box([5, 4, 3], 1.0).unwrap();
    let mut cfg = SolverConfig::bgk(0.8);
    cfg.periodic = [true; 3];
    let mut solver = Solver::new(domain, cfg).unwrap();
    let mut state = solver.initial_state(1.0, |_| [0.0; 3]);
    let before = state.f.clone();
    for _ in 0..10 {
        solver.step(&mut state, &no_inlets()).unwrap();
        let change = state.f.iter().zip(&before).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(change < 1e-14, "change {change}");
    }
    for s in 0..state.site_count() {
        for (a, b) in state.populations(s).iter().zip(W) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}

fn closed_box_state(solver: &Solver) -> LbState {
    let d = solver.domain();
    let mut state = solver.initial_state(1.0, |s| {
        let c = d.sites()[s].coord;
        [0.01 * (c[1] as f64 * 0.7).sin(), -0.01 * (c[2] as f64 * 0.5).cos(), 0.005]
    });
    // Density bump in one corner.
    for s in 0..state.site_count() {
        if d.sites()[s].coord.iter().all(|&c| c < 4) {
            for i in 0..Q {
                state.f[s * Q + i] *= 1.02;
            }
            let (rho, j) = super::d3q19::moments(state.populations(s));
            state.rho[s] = rho;
            state.vel[s] = [j[0] / rho, j[1] / rho, j[2] / rho];
        }
    }
    state
}

#[test]
fn closed_box_conserves_mass() {
    let domain = voxelize_primitive(&Primitive::ClosedBox { size: [8.0, 7.0, 6.0] }, 1.0).unwrap();
    let mut solver = Solver::new(domain, SolverConfig::bgk(0.7)).unwrap();
    let mut state = closed_box_state(&solver);
    let m0 = state.total_mass();
    for block in 0..10 {
        run_steps(&mut solver, &mut state, &no_inlets(), 1000);
        let drift = (state.total_mass() - m0).abs() / m0;
        assert!(drift < 1e-8, "after {} steps drift {drift}", (block + 1) * 1000);
    }
}

#[test]
fn halfway_fractions_match_simple_bounce_back() {
    // Tube with every wall fraction forced to 1/2.
    let tube = voxelize_primitive(&Primitive::Cylinder { radius: 5.0, length: 12.0 }, 1.0).unwrap();
    let sites: Vec<Site> = tube
        .sites()
        .iter()
        .map(|s| Site {
            coord: s.coord,
            kind: s.kind,
            wall_links: s.wall_links.iter().map(|l| WallLink { direction: l.direction, q: 0.5 }).collect(),
        })
        .collect();
    let domain = LatticeDomain::from_parts(
        tube.dims,
        tube.origin,
        tube.voxel_size,
        sites,
        tube.inlets.clone(),
        tube.outlets.clone(),
    )
    .unwrap();
    let mut a = Solver::new(domain.clone(), SolverConfig::bgk(0.6)).unwrap();
    let mut cfg = SolverConfig::bgk(0.6);
    cfg.wall = WallTreatment::SimpleBounceBack;
    let mut b = Solver::new(domain, cfg).unwrap();
    let inlet = a.inlet_sites(0);
    let shape: Vec<[f64; 3]> = inlet
        .iter()
        .map(|&s| {
            let p = a.domain().position(a.domain().sites()[s].coord);
            let r2 = (p.x * p.x + p.y * p.y) / 25.0;
            [0.0, 0.0, 2.0 * (1.0 - r2).max(0.0)]
        })
        .collect();
    let n = 300;
    let schedule = BoundarySchedule {
        inlets: vec![InletDrive { shape, mean: (0..=n).map(|k| 0.03 * (k as f64 / 50.0).min(1.0)).collect() }],
        outlet_density: vec![1.0],
    };
    let mut sa = a.initial_state(1.0, |_| [0.0; 3]);
    let mut sb = sa.clone();
    for _ in 0..n {
        a.step(&mut sa, &schedule).unwrap();
        b.step(&mut sb, &schedule).unwrap();
        let diff = sa.f.iter().zip(&sb.f).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(diff <= 1e-12, "step {}: {diff}", sa.step);
    }
}

/// Channel one site thick in x and z (both periodic) with walls normal to y at
/// fraction `q` beyond the first and last fluid rows, driven by a body force along x.
fn channel(n: u32, q: f32) -> LatticeDomain {
    let mut sites = Vec::new();
    for y in 1..=n {
        let mut links = Vec::new();
        for i in 1..Q {
            let cy = super::d3q19::C[i][1];
            if (y == 1 && cy == -1) || (y == n && cy == 1) {
                links.push(WallLink { direction: i as u8, q });
            }
        }
        let kind = if links.is_empty() { SiteKind::Fluid } else { SiteKind::WallFluid };
        sites.push(Site { coord: [0, y, 0], kind, wall_links: links });
    }
    LatticeDomain::from_parts([1, n + 2, 1], [0.0; 3], 1.0, sites, vec![], vec![]).unwrap()
}

/// Least-squares parabola through (y, u); returns its two roots in ascending order.
fn parabola_roots(ys: &[f64], us: &[f64]) -> (f64, f64) {
    let m = nalgebra::DMatrix::from_fn(ys.len(), 3, |r, c| ys[r].powi(c as i32));
    let b = nalgebra::DVector::from_column_slice(us);
    let coef = (m.transpose() * &m).lu().solve(&(m.transpose() * b)).unwrap();
    let (c0, c1, c2) = (coef[0], coef[1], coef[2]);
    let disc = (c1 * c1 - 4.0 * c2 * c0).sqrt();
    let r1 = (-c1 + disc) / (2.0 * c2);
    let r2 = (-c1 - disc) / (2.0 * c2);
    (r1.min(r2), r1.max(r2))
}

fn channel_wall_positions(q: f32, tau: f64) -> (f64, f64) {
    let n = 16;
    let mut cfg = SolverConfig::bgk(tau);
    cfg.periodic = [true, false, true];
    cfg.body_force = [1e-6, 0.0, 0.0];
    let mut solver = Solver::new(channel(n, q), cfg).unwrap();
    let mut state = solver.initial_state(1.0, |_| [0.0; 3]);
    run_steps(&mut solver, &mut state, &no_inlets(), 20_000);
    let ys: Vec<f64> = solver.domain().sites().iter().map(|s| s.coord[1] as f64).collect();
    let us: Vec<f64> = state.vel.iter().map(|u| u[0]).collect();
    parabola_roots(&ys, &us)
}

#[test]
fn bouzidi_quarter_fraction_wall_position() {
    let (lo, hi) = channel_wall_positions(0.25, 0.8);
    assert!((lo - 0.75).abs() < 0.05, "lower wall at {lo}");
    assert!((hi - 16.25).abs() < 0.05, "upper wall at {hi}");
}

#[test]
fn bouzidi_unit_fraction_wall_position() {
    let (lo, hi) = channel_wall_positions(1.0, 0.8);
    assert!((lo - 0.0).abs() < 0.05, "lower wall at {lo}");
    assert!((hi - 17.0).abs() < 0.05, "upper wall at {hi}");
}

/// Single periodic layer of a pipe of `radius` (lattice units) along z, with
/// wall fractions from the exact ray-circle intersection.
fn pipe_layer(radius: f64) -> LatticeDomain {
    let n = (2.0 * radius).ceil() as u32 + 2;
    let centre = n as f64 / 2.0;
    let inside = |x: f64, y: f64| (x - centre).powi(2) + (y - centre).powi(2) < radius * radius;
    let mut sites = Vec::new();
    for y in 0..n {
        for x in 0..n {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            if !inside(px, py) {
                continue;
            }
            let mut links = Vec::new();
            for i in 1..Q {
                let c = super::d3q19::C[i];
                let (cx, cy) = (c[0] as f64, c[1] as f64);
                if inside(px + cx, py + cy) {
                    continue;
                }
                // Solve |p + t c - centre| = R for t in (0, 1].
                let (dx, dy) = (px - centre, py - centre);
                let a = cx * cx + cy * cy;
                let b = 2.0 * (dx * cx + dy * cy);
                let cc = dx * dx + dy * dy - radius * radius;
                let t = (-b + (b * b - 4.0 * a * cc).sqrt()) / (2.0 * a);
                links.push(WallLink { direction: i as u8, q: t as f32 });
            }
            let kind = if links.is_empty() { SiteKind::Fluid } else { SiteKind::WallFluid };
            sites.push(Site { coord: [x, y, 0], kind, wall_links: links });
        }
    }
    LatticeDomain::from_parts([n, n, 1], [0.5 - centre, 0.5 - centre, 0.0], 1.0, sites, vec![], vec![]).unwrap()
}

/// Relative L2 error of a body-force-driven periodic pipe against the parabolic profile.
fn pipe_error(radius: f64) -> f64 {
    pipe_error_with(radius, SolverConfig::bgk(0.8))
}

fn pipe_error_with(radius: f64, base: SolverConfig) -> f64 {
    let domain = pipe_layer(radius);
    let tau = base.collision.tau();
    let nu = (tau - 0.5) / 3.0;
    let umax = 0.02;
    let force = 4.0 * nu * umax / (radius * radius);
    let mut cfg = base;
    cfg.periodic = [false, false, true];
    cfg.body_force = [0.0, 0.0, force];
    let mut solver = Solver::new(domain, cfg).unwrap();
    let mut state = solver.initial_state(1.0, |_| [0.0; 3]);
    let steps = (8.0 * radius * radius / nu) as u64;
    run_steps(&mut solver, &mut state, &no_inlets(), steps);
    let (mut num, mut den) = (0.0, 0.0);
    for (s, site) in solver.domain().sites().iter().enumerate() {
        let p = solver.domain().position(site.coord);
        let r2 = p.x * p.x + p.y * p.y;
        let exact = force / (4.0 * nu) * (radius * radius - r2);
        num += (state.vel[s][2] - exact).powi(2);
        den += exact * exact;
    }
    (num / den).sqrt()
}

#[test]
fn pipe_profile_converges_second_order() {
    let coarse = pipe_error(5.0);
    let fine = pipe_error(10.0);
    assert!(coarse < 0.05, "coarse error {coarse}");
    assert!(fine < 0.02, "fine error {fine}");
    assert!(coarse / fine >= 3.0, "coarse {coarse}, fine {fine}, ratio {}", coarse / fine);
}

fn tube_with_drive(radius: f64, length: f64, mean: f64, n: u64) -> (Solver, BoundarySchedule) {
    let domain = voxelize_primitive(&Primitive::Cylinder { radius, length }, 1.0).unwrap();
    let solver = Solver::new(domain, SolverConfig::bgk(0.8)).unwrap();
    let shape: Vec<[f64; 3]> = solver
        .inlet_sites(0)
        .iter()
        .map(|&s| {
            let p = solver.domain().position(solver.domain().sites()[s].coord);
            let r2 = (p.x * p.x + p.y * p.y) / (radius * radius);
            [0.0, 0.0, 2.0 * (1.0 - r2).max(0.0)]
        })
        .collect();
    let ramp = 200.0;
    let schedule = BoundarySchedule {
        inlets: vec![InletDrive { shape, mean: (0..=n).map(|k| mean * (k as f64 / ramp).min(1.0)).collect() }],
        outlet_density: vec![1.0],
    };
    (solver, schedule)
}

#[test]
fn zero_inlet_behaves_as_wall() {
    let (mut solver, schedule) = tube_with_drive(5.0, 10.0, 0.0, 200);
    let mut state = solver.initial_state(1.0, |_| [0.0; 3]);
    run_steps(&mut solver, &mut state, &schedule, 200);
    let flux: f64 = solver.inlet_sites(0).iter().map(|&s| state.rho[s] * state.vel[s][2]).sum();
    assert!(flux.abs() < 1e-10, "flux {flux}");
}

#[test]
fn velocity_driven_tube_reaches_poiseuille() {
    let radius = 10.0;
    let mean = 0.02;
    let n = 6000;
    let (mut solver, schedule) = tube_with_drive(radius, 30.0, mean, n);
    let mut state = solver.initial_state(1.0, |_| [0.0; 3]);
    run_steps(&mut solver, &mut state, &schedule, n);

    // Mid-length cross-section against u(r) = 2U(1 - r^2/R^2).
    let (mut num, mut den) = (0.0, 0.0);
    for (s, site) in solver.domain().sites().iter().enumerate() {
        let p = solver.domain().position(site.coord);
        if (p.z - 15.5).abs() > 0.1 {
            continue;
        }
        let exact = 2.0 * mean * (1.0 - (p.x * p.x + p.y * p.y) / (radius * radius));
        num += (state.vel[s][2] - exact).powi(2);
        den += exact * exact;
    }
    let err = (num / den).sqrt();
    assert!(err < 0.02, "L2 error {err}");

    // Imposed inlet mean is carried by the inlet sites.
    let inlet = solver.inlet_sites(0);
    let measured: f64 = inlet.iter().map(|&s| state.vel[s][2]).sum::<f64>() / inlet.len() as f64;
    let imposed: f64 = schedule.inlets[0].shape.iter().map(|v| v[2]).sum::<f64>() * mean / inlet.len() as f64;
    assert!((measured - imposed).abs() / imposed < 0.01);

    let outlet = solver.outlet_sites(0);
    let rho_out: f64 = outlet.iter().map(|&s| state.rho[s]).sum::<f64>() / outlet.len() as f64;
    assert!((rho_out - 1.0).abs() < 1e-6, "outlet density {rho_out}");
}

#[test]
fn inlet_mach_limit() {
    let (mut solver, mut schedule) = tube_with_drive(5.0, 10.0, 0.2, 10);
    schedule.inlets[0].mean = vec![0.2; 11];
    let mut state = solver.initial_state(1.0, |_| [0.0; 3]);
    let inlet = solver.inlet_sites(0);
    match solver.step(&mut state, &schedule) {
        Err(LbmError::Diverged { step: 1, coord, max_velocity, .. }) => {
            assert!(max_velocity >= 0.3);
            assert!(inlet.iter().any(|&s| solver.domain().sites()[s].coord == coord));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn divergence_is_reported_with_step() {
    let domain = LatticeDomain::full_box([4, 4, 4], 1.0).unwrap();
    let mut cfg = SolverConfig::bgk(0.51);
    cfg.periodic = [true; 3];
    cfg.body_force = [0.05, 0.0, 0.0];
    let mut solver = Solver::new(domain, cfg).unwrap();
    let mut state = solver.initial_state(1.0, |_| [0.0; 3]);
    let err = run(&mut solver, &mut state, &no_inlets(), 100, &mut []).unwrap_err();
    match err {
        LbmError::Diverged { step, max_velocity, .. } => {
            assert!(step > 1 && step < 100);
            assert!(max_velocity >= 0.3);
        }
        other => panic!("unexpected {other:?}"),
    }
}

struct Counter {
    cadence: u64,
    steps: Vec<u64>,
}

impl StepObserver for Counter {
    fn cadence(&self) -> u64 {
        self.cadence
    }
    fn observe(&mut self, _: &Solver, state: &LbState) -> Result<Vec<PathBuf>, String> {
        self.steps.push(state.step);
        Ok(vec![])
    }
}

#[test]
fn cadence_triggers_exact_event_count() {
    let domain = LatticeDomain::full_box([2, 2, 2], 1.0).unwrap();
    let mut cfg = SolverConfig::bgk(0.8);
    cfg.periodic = [true; 3];
    let mut solver = Solver::new(domain, cfg).unwrap();
    let mut state = solver.initial_state(1.0, |_| [0.0; 3]);
    let mut counter = Counter { cadence: 50_000, steps: vec![] };
    let result = run(&mut solver, &mut state, &no_inlets(), 200_000, &mut [&mut counter]).unwrap();
    assert_eq!(result.events, 4);
    assert_eq!(counter.steps, vec![50_000, 100_000, 150_000, 200_000]);
    assert!(matches!(run(&mut solver, &mut state, &no_inlets(), 0, &mut []), Err(LbmError::NoSteps)));
}

#[test]
fn results_independent_of_thread_count() {
    let (mut one, schedule) = tube_with_drive(6.0, 12.0, 0.02, 100);
    let mut cfg = one.config().clone();
    cfg.threads = 3;
    let mut three = Solver::new(one.domain().clone(), cfg).unwrap();
    let mut a = one.initial_state(1.0, |_| [0.0; 3]);
    let mut b = a.clone();
    run_steps(&mut one, &mut a, &schedule, 100);
    run_steps(&mut three, &mut b, &schedule, 100);
    assert_eq!(a, b);
    let mut c = one.initial_state(1.0, |_| [0.0; 3]);
    let (mut again, _) = tube_with_drive(6.0, 12.0, 0.02, 100);
    run_steps(&mut again, &mut c, &schedule, 100);
    assert_eq!(a, c);
}

#[test]
fn oblique_outlets_are_registered() {
    let y = Vessel::new(Primitive::YBifurcation {
        parent_radius: 4.0,
        parent_length: 10.0,
        daughter_radius: 3.0,
        daughter_length: 10.0,
        half_angle: 0.6,
    });
    let domain = voxelize(&y, 1.0).unwrap();
    let solver = Solver::new(domain.clone(), SolverConfig::bgk(0.8)).unwrap();
    for k in 0..2 {
        let r = IoletRef { kind: IoletKind::PressureOutlet, index: k };
        assert_eq!(solver.outlet_sites(k), domain.iolet_sites(r));
    }
}
