//! Multiscale ensemble blood-flow pipeline.
//!
//! A lumped arterial network produces an inlet velocity waveform per patient
//! configuration; the waveform drives a D3Q19 lattice-Boltzmann solver on a
//! voxelized vessel; wall shear stress and plane probes are extracted at a
//! fixed cadence and analysed across the ensemble.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod cardiac;
pub mod cli;
pub mod coupling;
pub mod ensemble;
pub mod extraction;
pub mod geometry;
pub mod lbm;
pub mod units;
