//! Patient configurations and the lumped arterial network that turns them
//! into an MCA inlet velocity waveform.

mod config;
mod network;
mod waveform;

pub use config::{
    build_configs, expand_configs, format_configs, parse_configs, read_configs, reference_configs, write_configs,
    PatientConfig, REST_PLACEMENT_PCT_VT,
};
pub use network::{
    aortic_inflow, calibrate_autoregulation, simulate_network, simulate_trace, waveform_for, ArterialNetwork,
    NetworkNode, NetworkTrace, Segment, DEFAULT_CYCLES, DEFAULT_DT,
};
pub use waveform::{format_waveform, parse_waveform, read_waveform, resample, write_waveform, Waveform};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CardiacError {
    #[error("invalid config {label:?}: {reason}")]
    InvalidConfig { label: String, reason: String },
    #[error("intensities must increase from rest: {0:?}")]
    NonMonotonicIntensities(Vec<f64>),
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
    #[error("network unstable at t = {t:.4} s: {reason}")]
    NetworkUnstable { t: f64, reason: String },
    #[error("simulation needs dt <= 5 ms and at least 2 cycles (dt = {dt}, cycles = {cycles})")]
    BadSimulationSetup { dt: f64, cycles: usize },
    #[error("calibration of {label:?} failed: target {target} m/s outside [{lo:.4}, {hi:.4}] m/s")]
    CalibrationFailed { label: String, target: f64, lo: f64, hi: f64 },
    #[error("resample target step {target} s is not finer than source step {current} s")]
    UpsampleOnly { target: f64, current: f64 },
    #[error("waveform is empty")]
    EmptyWaveform,
    #[error("config file line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("waveform file: {0}")]
    WaveformFormat(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for CardiacError {
    fn from(e: std::io::Error) -> Self {
        CardiacError::Io(e.to_string())
    }
}
