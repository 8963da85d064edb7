//! Physical <-> lattice unit conversion.
//!
//! Lattice quantities are expressed with `dx = dt = 1` and reference density
//! `1`. The relaxation time follows from the kinematic viscosity:
//! `nu_lattice = nu * dt / dx^2` and `tau = 3 * nu_lattice + 1/2`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Speed of sound squared on the D3Q19 lattice.
pub const CS2: f64 = 1.0 / 3.0;

/// Lattice speed above which compressibility errors become noticeable.
pub const MACH_WARNING: f64 = 0.1;
/// Lattice speed treated as a hard stability failure.
pub const MACH_LIMIT: f64 = 0.3;
/// Default upper bound on the relaxation time.
pub const DEFAULT_TAU_MAX: f64 = 2.0;

/// Whole-blood defaults: density 1050 kg/m^3, viscosity 3.5 mPa s.
pub const BLOOD_DENSITY: f64 = 1050.0;
pub const BLOOD_VISCOSITY: f64 = 0.0035;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UnitsError {
    #[error("fluid property must be strictly positive: {name} = {value}")]
    NonPositiveProperty { name: &'static str, value: f64 },
    #[error("voxel size and time step must be positive (dx = {dx}, dt = {dt})")]
    NonPositiveStep { dx: f64, dt: f64 },
    #[error("relaxation time {tau} outside stable range (0.5, {tau_max})")]
    TauUnstable { tau: f64, tau_max: f64 },
    #[error("lattice speed {speed} exceeds hard limit {MACH_LIMIT}")]
    MachExceeded { speed: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluidProperties {
    /// kg/m^3
    pub density: f64,
    /// Pa s
    pub dynamic_viscosity: f64,
}

impl FluidProperties {
    pub fn new(density: f64, dynamic_viscosity: f64) -> Result<Self, UnitsError> {
        let fluid = Self { density, dynamic_viscosity };
        fluid.validate()?;
        Ok(fluid)
    }

    pub fn blood() -> Self {
        Self { density: BLOOD_DENSITY, dynamic_viscosity: BLOOD_VISCOSITY }
    }

    pub fn validate(&self) -> Result<(), UnitsError> {
        if !(self.density > 0.0) {
            return Err(UnitsError::NonPositiveProperty { name: "density", value: self.density });
        }
        if !(self.dynamic_viscosity > 0.0) {
            return Err(UnitsError::NonPositiveProperty { name: "dynamic_viscosity", value: self.dynamic_viscosity });
        }
        Ok(())
    }

    /// m^2/s
    pub fn kinematic_viscosity(&self) -> f64 {
        self.dynamic_viscosity / self.density
    }
}

impl Default for FluidProperties {
    fn default() -> Self {
        Self::blood()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeUnits {
    /// Voxel size, m.
    pub dx: f64,
    /// Time step, s.
    pub dt: f64,
    /// BGK relaxation time (dimensionless).
    pub tau: f64,
    /// m/s per lattice velocity unit; always `dx / dt`.
    pub velocity_scale: f64,
    /// Pa per lattice pressure (stress) unit; `rho * (dx/dt)^2`.
    pub pressure_scale: f64,
}

impl LatticeUnits {
    /// Lattice kinematic viscosity `(tau - 1/2) / 3`.
    pub fn lattice_viscosity(&self) -> f64 {
        (self.tau - 0.5) * CS2
    }

    /// Simulated physical time after `steps` steps.
    pub fn time_of(&self, steps: u64) -> f64 {
        steps as f64 * self.dt
    }

    /// Number of whole steps covering `seconds` (rounded to nearest).
    pub fn steps_for(&self, seconds: f64) -> u64 {
        (seconds / self.dt).round().max(0.0) as u64
    }
}

/// Derives lattice parameters for a voxel size and time step with the default tau bound.
pub fn derive_lattice_units(dx: f64, dt: f64, fluid: &FluidProperties) -> Result<LatticeUnits, UnitsError> {
    derive_lattice_units_bounded(dx, dt, fluid, DEFAULT_TAU_MAX)
}

pub fn derive_lattice_units_bounded(
    dx: f64,
    dt: f64,
    fluid: &FluidProperties,
    tau_max: f64,
) -> Result<LatticeUnits, UnitsError> {
    if !(dx > 0.0 && dt > 0.0) {
        return Err(UnitsError::NonPositiveStep { dx, dt });
    }
    if !(fluid.density > 0.0) {
        return Err(UnitsError::NonPositiveProperty { name: "density", value: fluid.density });
    }
    // Zero viscosity is reported as the tau = 1/2 stability boundary.
    let nu_lattice = fluid.kinematic_viscosity() * dt / (dx * dx);
    let tau = 3.0 * nu_lattice + 0.5;
    if !(tau > 0.5 && tau < tau_max) {
        return Err(UnitsError::TauUnstable { tau, tau_max });
    }
    let velocity_scale = dx / dt;
    Ok(LatticeUnits { dx, dt, tau, velocity_scale, pressure_scale: fluid.density * velocity_scale * velocity_scale })
}

/// Picks the time step that yields the requested relaxation time.
pub fn lattice_units_for_tau(dx: f64, tau: f64, fluid: &FluidProperties) -> Result<LatticeUnits, UnitsError> {
    fluid.validate()?;
    if !(tau > 0.5 && tau < DEFAULT_TAU_MAX) {
        return Err(UnitsError::TauUnstable { tau, tau_max: DEFAULT_TAU_MAX });
    }
    let dt = (tau - 0.5) * CS2 * dx * dx / fluid.kinematic_viscosity();
    derive_lattice_units(dx, dt, fluid)
}

/// Emitted when a converted speed exceeds [`MACH_WARNING`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MachWarning {
    pub lattice_speed: f64,
}

/// Converts m/s to lattice units, flagging speeds above the Mach warning threshold.
pub fn to_lattice_velocity(u: f64, units: &LatticeUnits) -> (f64, Option<MachWarning>) {
    let lattice = u * units.dt / units.dx;
    let warning = (lattice.abs() > MACH_WARNING).then(|| {
        log::warn!("lattice speed {lattice:.4} above Mach warning threshold {MACH_WARNING}");
        MachWarning { lattice_speed: lattice }
    });
    (lattice, warning)
}

pub fn to_physical_velocity(u_lattice: f64, units: &LatticeUnits) -> f64 {
    u_lattice * units.velocity_scale
}

/// Hard stability check on a lattice speed.
pub fn check_mach(u_lattice: f64) -> Result<(), UnitsError> {
    if u_lattice.abs() >= MACH_LIMIT || !u_lattice.is_finite() {
        Err(UnitsError::MachExceeded { speed: u_lattice })
    } else {
        Ok(())
    }
}

/// Lattice stress -> Pa.
pub fn to_physical_stress(sigma_lattice: f64, units: &LatticeUnits, fluid: &FluidProperties) -> f64 {
    sigma_lattice * fluid.density * units.velocity_scale * units.velocity_scale
}

/// Pa -> lattice stress.
pub fn to_lattice_stress(sigma: f64, units: &LatticeUnits, fluid: &FluidProperties) -> f64 {
    sigma / (fluid.density * units.velocity_scale * units.velocity_scale)
}

/// Gauge pressure in Pa for a lattice density (reference density 1).
pub fn to_physical_pressure(rho_lattice: f64, units: &LatticeUnits) -> f64 {
    CS2 * (rho_lattice - 1.0) * units.pressure_scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn reference_units(mu: f64) -> LatticeUnits {
        let fluid = FluidProperties::new(1050.0, mu).unwrap();
        derive_lattice_units(18.9e-6, 0.5014e-6, &fluid).unwrap()
    }

    #[test]
    fn tau_for_published_grid() {
        let units = reference_units(0.0035);
        let expected = 3.0 * (0.0035 / 1050.0) * (0.5014e-6 / (18.9e-6 * 18.9e-6)) + 0.5;
        assert_relative_eq!(units.tau, expected, max_relative = 1e-14);
        assert!((units.tau - 0.51404).abs() < 5e-6, "tau = {}", units.tau);
        assert_eq!(units.velocity_scale, 18.9e-6 / 0.5014e-6);
    }

    #[test]
    fn zero_viscosity_is_tau_boundary() {
        let fluid = FluidProperties { density: 1.0, dynamic_viscosity: 0.0 };
        assert!(matches!(
            derive_lattice_units(1.0, 1.0, &fluid),
            Err(UnitsError::TauUnstable { tau, .. }) if tau == 0.5
        ));
        assert!(FluidProperties::new(1.0, 0.0).is_err());
    }

    #[test]
    fn unit_lattice() {
        let fluid = FluidProperties::new(1.0, 1.0 / 6.0).unwrap();
        let units = derive_lattice_units(1.0, 1.0, &fluid).unwrap();
        assert_relative_eq!(units.tau, 1.0, max_relative = 1e-15);
        assert_eq!(to_physical_stress(1.0, &units, &fluid), 1.0);
    }

    #[test]
    fn tau_upper_bound() {
        let fluid = FluidProperties::new(1.0, 1.0).unwrap();
        assert!(matches!(derive_lattice_units(1.0, 1.0, &fluid), Err(UnitsError::TauUnstable { .. })));
    }

    #[test]
    fn tau_band_over_viscosity_range() {
        for mu in [0.003, 0.0033, 0.0035, 0.0038, 0.004] {
            let tau = reference_units(mu).tau;
            assert!(tau > 0.512 && tau < 0.517, "mu = {mu}: tau = {tau}");
        }
    }

    #[test]
    fn velocity_conversion() {
        let units = reference_units(0.0035);
        let (u, warn) = to_lattice_velocity(1.19, &units);
        assert!((u - 1.19 * 0.5014e-6 / 18.9e-6).abs() < 1e-15);
        assert!((u - 0.03157).abs() < 1e-5);
        assert!(warn.is_none());
        assert_eq!(to_lattice_velocity(0.0, &units).0, 0.0);
        assert_relative_eq!(to_lattice_velocity(units.velocity_scale, &units).0, 1.0, max_relative = 1e-15);
    }

    #[test]
    fn mach_warning_and_limit() {
        let fluid = FluidProperties::new(1.0, 1.0 / 6.0).unwrap();
        let units = derive_lattice_units(1.0, 1.0, &fluid).unwrap();
        assert!(to_lattice_velocity(0.15, &units).1.is_some());
        assert!(to_lattice_velocity(0.05, &units).1.is_none());
        assert!(check_mach(0.29).is_ok());
        assert!(check_mach(0.3).is_err());
        assert!(check_mach(f64::NAN).is_err());
    }

    #[test]
    fn stress_round_trip() {
        let fluid = FluidProperties::blood();
        let units = reference_units(0.0035);
        assert_eq!(to_physical_stress(0.0, &units, &fluid), 0.0);
        let back = to_physical_stress(to_lattice_stress(18.0, &units, &fluid), &units, &fluid);
        assert_relative_eq!(back, 18.0, max_relative = 1e-12);
    }

    #[test]
    fn tau_request_round_trips() {
        let fluid = FluidProperties::blood();
        let units = lattice_units_for_tau(1e-4, 0.8, &fluid).unwrap();
        assert_relative_eq!(units.tau, 0.8, max_relative = 1e-12);
    }

    proptest! {
        #[test]
        fn velocity_round_trip(u in -10.0f64..10.0, dx in 1e-6f64..1e-3, dt in 1e-7f64..1e-4) {
            let fluid = FluidProperties { density: 1050.0, dynamic_viscosity: 1e-12 };
            let units = LatticeUnits {
                dx, dt, tau: 0.6, velocity_scale: dx / dt,
                pressure_scale: fluid.density * (dx / dt).powi(2),
            };
            let back = to_physical_velocity(to_lattice_velocity(u, &units).0, &units);
            prop_assert!((back - u).abs() <= 1e-12 * u.abs().max(1e-300));
        }
    }
}
