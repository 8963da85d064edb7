//! Post-processing of run outputs: WSS statistics, heart-rate recovery from
//! probe series, and the cross-instance report.

mod plot;
mod report;

pub use plot::{line_chart, Series};
pub use report::{
    cross_instance_report, load_instance, summarize, InstanceData, InstanceSummary, ReportStatus, ReportSummary,
    REPORT_FILES, WAVEFORM_FILE,
};

use std::ops::Range;

use rustfft::{num_complex::Complex, FftPlanner};
use thiserror::Error;

/// Default spacing between WSS samples used for the slope metric, s.
pub const DEFAULT_INTERVAL: f64 = 0.025;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("series has no non-constant component")]
    NoDominantFrequency,
    #[error("ensemble incomplete, missing {missing:?}")]
    IncompleteEnsemble { missing: Vec<String> },
    #[error("{path}: {reason}")]
    BadInput { path: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WssSiteStats {
    pub max: f64,
    pub mean: f64,
    /// Mean absolute difference between consecutive samples.
    pub slope_variability: f64,
}

pub fn wss_site_stats(series: &[f64]) -> Result<WssSiteStats, AnalysisError> {
    if series.len() < 2 {
        return Err(AnalysisError::TooFewSamples { needed: 2, got: series.len() });
    }
    let n = series.len() as f64;
    let max = series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = series.iter().sum::<f64>() / n;
    let slope = series.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() / (n - 1.0);
    Ok(WssSiteStats { max, mean, slope_variability: slope })
}

/// Indices of samples at `times` lying in the longest run of whole cycles
/// after `skip` seconds.
pub fn cycle_window(times: &[f64], period: f64, skip: f64) -> Result<Range<usize>, AnalysisError> {
    let eps = 1e-9 * period;
    let start = times.iter().position(|&t| t >= skip - eps).unwrap_or(times.len());
    let last = times.last().copied().unwrap_or(0.0);
    let cycles = ((last - skip + eps) / period).floor();
    if start == times.len() || cycles < 1.0 {
        return Err(AnalysisError::TooFewSamples { needed: 2, got: times.len() - start.min(times.len()) });
    }
    let end_t = skip + cycles * period - eps;
    let end = times.iter().position(|&t| t >= end_t).unwrap_or(times.len());
    if end < start + 2 {
        return Err(AnalysisError::TooFewSamples { needed: 2, got: end - start });
    }
    Ok(start..end)
}

/// Frequency of the largest non-DC peak of the magnitude spectrum, Hz.
pub fn dominant_frequency(series: &[f64], dt: f64) -> Result<f64, AnalysisError> {
    let n = series.len();
    if n < 4 {
        return Err(AnalysisError::TooFewSamples { needed: 4, got: n });
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex<f64>> = series.iter().map(|&x| Complex::new(x - mean, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let scale = series.iter().map(|x| x.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let (k, mag) =
        (1..=n / 2).map(|k| (k, buf[k].norm())).fold((0, 0.0), |best, cur| if cur.1 > best.1 { cur } else { best });
    if k == 0 || mag <= 1e-9 * scale * n as f64 {
        return Err(AnalysisError::NoDominantFrequency);
    }
    Ok(k as f64 / (n as f64 * dt))
}

/// Spectral resolution of an `n`-sample series at spacing `dt`.
pub fn bin_width(n: usize, dt: f64) -> f64 {
    1.0 / (n as f64 * dt)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least squares `y = slope x + intercept`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit, AnalysisError> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(AnalysisError::TooFewSamples { needed: 2, got: x.len().min(y.len()) });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum();
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    Ok(LinearFit { slope, intercept, r2 })
}
