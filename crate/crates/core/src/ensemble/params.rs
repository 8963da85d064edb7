use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::EnsembleError;
use crate::cardiac::{waveform_for, ArterialNetwork, PatientConfig, Waveform, DEFAULT_CYCLES, DEFAULT_DT};
use crate::coupling::ProfileKind;
use crate::extraction::RunMeta;
use crate::units::{derive_lattice_units, lattice_units_for_tau, FluidProperties, LatticeUnits, CS2};

/// How the lattice time step and fluid viscosity are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViscosityMode {
    /// Blood viscosity; the time step follows from `tau`.
    Physical,
    /// The time step follows from `peak_lattice_speed`; viscosity is whatever
    /// `tau` then implies. Lets coarse grids run at a stable relaxation time.
    Surrogate,
}

/// Solver and extraction settings shared by every instance of an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverParams {
    pub tau: f64,
    /// Lattice speed of the fastest inlet centreline over all instances.
    pub peak_lattice_speed: f64,
    pub viscosity: ViscosityMode,
    /// Whole cardiac cycles simulated after the warm-up.
    pub cycles: u32,
    pub warmup: bool,
    pub profile: ProfileKind,
    /// Spacing of WSS extractions, s.
    pub wss_interval_s: f64,
    /// Spacing of probe records, s.
    pub probe_interval_s: f64,
    /// Probe plane distance upstream of the first outlet, m.
    pub probe_offset_m: f64,
    pub density_kg_m3: f64,
    pub viscosity_pa_s: f64,
    pub threads_per_instance: usize,
    /// Per-label relaxation time replacing `tau`.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub tau_overrides: BTreeMap<String, f64>,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            tau: 0.52,
            peak_lattice_speed: 0.15,
            viscosity: ViscosityMode::Surrogate,
            cycles: 4,
            warmup: true,
            profile: ProfileKind::Poiseuille,
            wss_interval_s: 0.025,
            probe_interval_s: 0.005,
            probe_offset_m: 2e-3,
            density_kg_m3: 1050.0,
            viscosity_pa_s: 0.0035,
            threads_per_instance: 1,
            tau_overrides: BTreeMap::new(),
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<(), EnsembleError> {
        let bad = |m: &str| Err(EnsembleError::InvalidParams(m.into()));
        if !(self.tau > 0.5) || self.tau_overrides.values().any(|t| !(*t > 0.5)) {
            return bad("relaxation times must exceed 0.5");
        }
        if !(self.peak_lattice_speed > 0.0 && self.peak_lattice_speed < 0.3) {
            return bad("peak_lattice_speed must lie in (0, 0.3)");
        }
        if self.cycles == 0 {
            return bad("cycles must be at least 1");
        }
        if !(self.wss_interval_s > 0.0 && self.probe_interval_s > 0.0 && self.probe_offset_m >= 0.0) {
            return bad("intervals must be positive and the probe offset non-negative");
        }
        if self.threads_per_instance == 0 {
            return bad("threads_per_instance must be at least 1");
        }
        FluidProperties::new(self.density_kg_m3, self.viscosity_pa_s)
            .map(|_| ())
            .map_err(|e| EnsembleError::InvalidParams(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("solver params serialize")
    }

    pub fn from_toml(text: &str) -> Result<Self, EnsembleError> {
        let p: Self = toml::from_str(text).map_err(|e| EnsembleError::InvalidParams(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    fn tau_for(&self, label: &str) -> f64 {
        self.tau_overrides.get(label).copied().unwrap_or(self.tau)
    }
}

/// Inlet waveforms for `configs`: the last two cycles of the calibrated
/// network response, with the autoregulation factor used.
pub fn generate_waveforms(configs: &[PatientConfig]) -> Result<Vec<(Waveform, f64)>, EnsembleError> {
    Ok(waveform_for(configs, &ArterialNetwork::standard(), DEFAULT_CYCLES, DEFAULT_DT)?
        .into_iter()
        .map(|(w, f)| (w.last_cycles(2), f))
        .collect())
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Lattice units and fluid for one instance.
pub fn instance_units(
    params: &SolverParams,
    label: &str,
    voxel_size: f64,
    peak_inlet_speed: f64,
) -> Result<(LatticeUnits, FluidProperties), EnsembleError> {
    let tau = params.tau_for(label);
    let bad = |e: crate::units::UnitsError| EnsembleError::InvalidParams(format!("{label}: {e}"));
    match params.viscosity {
        ViscosityMode::Physical => {
            let fluid = FluidProperties::new(params.density_kg_m3, params.viscosity_pa_s).map_err(bad)?;
            Ok((lattice_units_for_tau(voxel_size, tau, &fluid).map_err(bad)?, fluid))
        }
        ViscosityMode::Surrogate => {
            let raw = params.peak_lattice_speed * voxel_size / peak_inlet_speed;
            // Whole steps per sampling interval; the probe interval when it
            // divides the WSS interval, so both cadences stay exact.
            let ratio = params.wss_interval_s / params.probe_interval_s;
            let base = if (ratio - ratio.round()).abs() < 1e-9 && ratio.round() >= 1.0 {
                params.probe_interval_s
            } else {
                params.wss_interval_s
            };
            let dt = base / (base / raw).ceil();
            let nu = (tau - 0.5) * CS2 * voxel_size * voxel_size / dt;
            let fluid = FluidProperties::new(params.density_kg_m3, params.density_kg_m3 * nu).map_err(bad)?;
            let mut units = derive_lattice_units(voxel_size, dt, &fluid).map_err(bad)?;
            units.tau = tau;
            Ok((units, fluid))
        }
    }
}

/// Run descriptions for every config on a lattice of `voxel_size`, with the
/// waveforms they are driven by.
pub fn prepare_runs(
    configs: &[PatientConfig],
    waveforms: &[Waveform],
    voxel_size: f64,
    params: &SolverParams,
) -> Result<Vec<RunMeta>, EnsembleError> {
    params.validate()?;
    let shape_peak = match params.profile {
        ProfileKind::Poiseuille => 2.0,
        ProfileKind::Plug => 1.0,
    };
    let peak = waveforms.iter().map(|w| w.max()).fold(0.0, f64::max) * shape_peak;
    if !(peak > 0.0) {
        return Err(EnsembleError::InvalidParams("inlet waveforms are identically zero".into()));
    }
    configs
        .iter()
        .zip(waveforms)
        .map(|(c, w)| {
            let (units, fluid) = instance_units(params, &c.label, voxel_size, peak)?;
            let wss_cadence = ((params.wss_interval_s / units.dt).round() as u64).max(1);
            let probe_cadence = ((params.probe_interval_s / units.dt).round() as u64).max(1);
            let lcm = wss_cadence / gcd(wss_cadence, probe_cadence) * probe_cadence;
            let warm = if params.warmup { 0.5 } else { 0.0 };
            let raw = ((warm + params.cycles as f64) * w.period() / units.dt).ceil() as u64;
            Ok(RunMeta {
                label: c.label.clone(),
                intensity_pct_vt: c.intensity_pct_vt,
                heart_rate_bpm: c.heart_rate_bpm,
                steps: raw.div_ceil(lcm) * lcm,
                probe_cadence,
                wss_cadence,
                warmup: params.warmup,
                profile: params.profile.to_string(),
                probe_offset_m: params.probe_offset_m,
                units,
                fluid,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cardiac::reference_configs;

    #[test]
    fn params_round_trip_and_reject_unknown_keys() {
        let mut p = SolverParams::default();
        p.tau_overrides.insert("vt70".into(), 0.5000001);
        assert_eq!(SolverParams::from_toml(&p.to_toml()).unwrap(), p);
        assert!(SolverParams::from_toml("tau = 0.6\nspeed = 3\n").is_err());
        assert_eq!(SolverParams::from_toml("tau = 0.6\n").unwrap().tau, 0.6);
        assert!(SolverParams::from_toml("tau = 0.4\n").is_err());
    }

    #[test]
    fn surrogate_units_hit_speed_and_interval() {
        let p = SolverParams::default();
        let (u, fluid) = instance_units(&p, "rest", 3.5e-4, 2.4).unwrap();
        let steps = p.wss_interval_s / u.dt;
        assert!((steps - steps.round()).abs() < 1e-9);
        assert!(2.4 * u.dt / u.dx <= p.peak_lattice_speed + 1e-12);
        assert!((u.lattice_viscosity() - fluid.kinematic_viscosity() * u.dt / (u.dx * u.dx)).abs() < 1e-12);
        assert_eq!(u.tau, 0.52);
    }

    #[test]
    fn physical_units_use_blood() {
        let p = SolverParams { viscosity: ViscosityMode::Physical, tau: 0.51, ..Default::default() };
        let (u, fluid) = instance_units(&p, "rest", 1e-4, 2.0).unwrap();
        assert_eq!(fluid, FluidProperties::blood());
        assert!((u.tau - 0.51).abs() < 1e-12);
    }

    #[test]
    fn runs_cover_warmup_and_cycles() {
        let configs = reference_configs();
        let waves: Vec<Waveform> = generate_waveforms(&configs).unwrap().into_iter().map(|w| w.0).collect();
        let p = SolverParams::default();
        let runs = prepare_runs(&configs, &waves, 3.5e-4, &p).unwrap();
        assert_eq!(runs.len(), 7);
        for (r, w) in runs.iter().zip(&waves) {
            let t = r.units.time_of(r.steps);
            assert!(t >= 4.5 * w.period() - 1e-12);
            assert_eq!(r.steps % r.wss_cadence, 0);
            assert_eq!(r.steps % r.probe_cadence, 0);
            assert!((r.units.dt * r.wss_cadence as f64 - 0.025).abs() < 1e-12);
            assert_eq!(r.wss_cadence, 5 * r.probe_cadence);
            assert!(t < 4.5 * w.period() + r.units.time_of(r.wss_cadence));
        }
        // One time step for the whole ensemble.
        assert!(runs.iter().all(|r| r.units.dt == runs[0].units.dt));
    }
}
