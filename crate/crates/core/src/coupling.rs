//! One-way coupling from a cardiac waveform to the lattice inlets: per-site
//! velocity profiles and the per-step mean velocity series.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cardiac::Waveform;
use crate::geometry::{IoletKind, IoletRef, LatticeDomain};
use crate::lbm::{BoundarySchedule, InletDrive};
use crate::units::{LatticeUnits, MACH_LIMIT};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CouplingError {
    #[error("peak inlet speed {peak:.4} lattice units reaches the limit {MACH_LIMIT}")]
    MachExceeded { peak: f64 },
    #[error("mean inlet velocity must be finite and non-negative, got {0}")]
    NegativeSample(f64),
    #[error("waveform is empty")]
    EmptyWaveform,
    #[error("inlet {0} does not exist or has no sites")]
    UnknownInlet(usize),
}

/// Spatial shape of the imposed inlet velocity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileKind {
    /// `u(r) = 2 U (1 - r²/R²)`, zero at and beyond the inlet radius.
    #[default]
    Poiseuille,
    /// Uniform `U` over every inlet site.
    Plug,
}

impl std::fmt::Display for ProfileKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Poiseuille => "poiseuille",
            Self::Plug => "plug",
        })
    }
}

impl std::str::FromStr for ProfileKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "poiseuille" => Ok(Self::Poiseuille),
            "plug" => Ok(Self::Plug),
            _ => Err(format!("unknown profile kind {s:?} (poiseuille|plug)")),
        }
    }
}

/// Inlet velocities at one instant, in the inlet's canonical site order.
#[derive(Debug, Clone, PartialEq)]
pub struct InletProfile {
    pub kind: ProfileKind,
    pub sites: Vec<usize>,
    /// Lattice velocity per site.
    pub velocities: Vec<[f64; 3]>,
}

impl InletProfile {
    /// Flux through the inlet divided by the nominal disc area, in lattice units.
    pub fn area_mean(&self, domain: &LatticeDomain, inlet: usize) -> f64 {
        let spec = &domain.inlets[inlet];
        let inward = -spec.normal;
        let flux: f64 = self.velocities.iter().map(|v| v[0] * inward.x + v[1] * inward.y + v[2] * inward.z).sum();
        let r = spec.radius / domain.voxel_size;
        flux / (std::f64::consts::PI * r * r)
    }
}

/// Per-site lattice velocity for a unit mean speed, directed into the fluid.
pub fn unit_shape(domain: &LatticeDomain, inlet: usize, kind: ProfileKind) -> Result<InletProfile, CouplingError> {
    let spec = domain.inlets.get(inlet).ok_or(CouplingError::UnknownInlet(inlet))?;
    let sites = domain.iolet_sites(IoletRef { kind: IoletKind::VelocityInlet, index: inlet });
    if sites.is_empty() {
        return Err(CouplingError::UnknownInlet(inlet));
    }
    let dir = -spec.normal;
    let velocities = sites
        .iter()
        .map(|&s| {
            let m = match kind {
                ProfileKind::Plug => 1.0,
                ProfileKind::Poiseuille => {
                    let r = spec.lateral_distance(&domain.position(domain.sites()[s].coord)) / spec.radius;
                    2.0 * (1.0 - r * r).max(0.0)
                }
            };
            [dir.x * m, dir.y * m, dir.z * m]
        })
        .collect();
    Ok(InletProfile { kind, sites, velocities })
}

fn peak(shape: &[[f64; 3]]) -> f64 {
    shape.iter().map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()).fold(0.0, f64::max)
}

/// Profile for a mean inlet velocity `sample` in m/s.
pub fn build_profile(
    sample: f64,
    inlet: usize,
    domain: &LatticeDomain,
    units: &LatticeUnits,
    kind: ProfileKind,
) -> Result<InletProfile, CouplingError> {
    if !(sample >= 0.0) || !sample.is_finite() {
        return Err(CouplingError::NegativeSample(sample));
    }
    let mut profile = unit_shape(domain, inlet, kind)?;
    let m = sample * units.dt / units.dx;
    let top = peak(&profile.velocities) * m;
    if top >= MACH_LIMIT {
        return Err(CouplingError::MachExceeded { peak: top });
    }
    for v in &mut profile.velocities {
        *v = [v[0] * m, v[1] * m, v[2] * m];
    }
    Ok(profile)
}

/// Lattice mean inlet speed for steps `0..=n_steps`. The waveform repeats
/// periodically past its end. With `warmup`, the first half cycle is ramped
/// linearly from zero.
pub fn mean_series(
    waveform: &Waveform,
    n_steps: u64,
    units: &LatticeUnits,
    warmup: bool,
) -> Result<Vec<f64>, CouplingError> {
    if waveform.samples.is_empty() {
        return Err(CouplingError::EmptyWaveform);
    }
    if waveform.duration() < n_steps as f64 * units.dt {
        log::debug!("run of {n_steps} steps wraps the waveform periodically");
    }
    let ramp = 0.5 * waveform.period();
    let to_lattice = units.dt / units.dx;
    Ok((0..=n_steps)
        .map(|k| {
            let t = k as f64 * units.dt;
            let scale = if warmup { (t / ramp).min(1.0) } else { 1.0 };
            waveform.value_at(t) * scale * to_lattice
        })
        .collect())
}

/// Boundary schedule driving every inlet of `domain` with `waveform`, all
/// outlets held at zero gauge pressure.
pub fn schedule_from_waveform(
    waveform: &Waveform,
    n_steps: u64,
    units: &LatticeUnits,
    domain: &LatticeDomain,
    kind: ProfileKind,
    warmup: bool,
) -> Result<BoundarySchedule, CouplingError> {
    let mean = mean_series(waveform, n_steps, units, warmup)?;
    if let Some(&bad) = mean.iter().find(|m| !(**m >= 0.0)) {
        return Err(CouplingError::NegativeSample(bad / units.dt * units.dx));
    }
    let top = mean.iter().copied().fold(0.0, f64::max);
    let mut inlets = Vec::with_capacity(domain.inlets.len());
    for k in 0..domain.inlets.len() {
        let shape = unit_shape(domain, k, kind)?.velocities;
        let p = peak(&shape) * top;
        if p >= MACH_LIMIT {
            return Err(CouplingError::MachExceeded { peak: p });
        }
        inlets.push(InletDrive { shape, mean: mean.clone() });
    }
    Ok(BoundarySchedule { inlets, outlet_density: vec![1.0; domain.outlets.len()] })
}
