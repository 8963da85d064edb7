//! D3Q19 lattice-Boltzmann solver over a sparse [`LatticeDomain`].
//!
//! One step is collide, pull-stream, wall reconstruction (Bouzidi linear
//! interpolation), iolet reconstruction, then moment update and stability
//! checks. Everything is in lattice units.
//!
//! [`LatticeDomain`]: crate::geometry::LatticeDomain

pub mod d3q19;
mod solver;

pub use solver::{
    run, BoundarySchedule, Collision, InletDrive, LbState, RunResult, Solver, SolverConfig, StepObserver, WallTreatment,
};

use thiserror::Error;

use crate::geometry::Coord;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LbmError {
    #[error("diverged at step {step}: site {coord:?}, |u| = {max_velocity:.4e}, rho = {rho:.6e}")]
    Diverged { step: u64, coord: Coord, max_velocity: f64, rho: f64 },
    #[error("boundary schedule ends at step {available}, step {needed} requested")]
    ScheduleTooShort { needed: u64, available: u64 },
    #[error("inlet {inlet} profile has {found} sites, lattice has {expected}")]
    ProfileMismatch { inlet: usize, expected: usize, found: usize },
    #[error("run needs at least one step")]
    NoSteps,
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("extraction hook failed at step {step}: {message}")]
    Hook { step: u64, message: String },
}

#[cfg(test)]
mod tests;
