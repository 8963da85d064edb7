use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::CardiacError;

const HEADER_TAG: &str = "# hemoflow-waveform v1";

/// Uniformly sampled mean inlet velocity (m/s) over whole cardiac cycles.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub dt: f64,
    pub samples: Vec<f64>,
    pub cycles: usize,
    pub heart_rate: f64,
}

impl Waveform {
    pub fn period(&self) -> f64 {
        60.0 / self.heart_rate
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 * self.dt
    }

    pub fn samples_per_cycle(&self) -> usize {
        (self.period() / self.dt).round() as usize
    }

    /// Linear interpolation, treating the record as periodic over its duration.
    pub fn value_at(&self, t: f64) -> f64 {
        let n = self.samples.len();
        if n == 1 {
            return self.samples[0];
        }
        let x = (t / self.dt).rem_euclid(n as f64);
        let k = (x.floor() as usize).min(n - 1);
        let frac = x - k as f64;
        let a = self.samples[k];
        let b = self.samples[(k + 1) % n];
        if frac == 0.0 {
            a
        } else {
            a + (b - a) * frac
        }
    }

    /// The trailing `n` cycles as a waveform of their own.
    pub fn last_cycles(&self, n: usize) -> Waveform {
        let per = self.samples_per_cycle();
        let n = n.min(self.cycles).max(1);
        let take = (per * n).min(self.samples.len());
        Waveform {
            dt: self.dt,
            samples: self.samples[self.samples.len() - take..].to_vec(),
            cycles: n,
            heart_rate: self.heart_rate,
        }
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.samples.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.samples.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Linear re-gridding onto a finer step.
pub fn resample(waveform: &Waveform, dt_target: f64) -> Result<Waveform, CardiacError> {
    if waveform.samples.is_empty() {
        return Err(CardiacError::EmptyWaveform);
    }
    if !(dt_target > 0.0) || dt_target >= waveform.dt {
        return Err(CardiacError::UpsampleOnly { target: dt_target, current: waveform.dt });
    }
    let n = (waveform.duration() / dt_target).round() as usize;
    let samples = (0..n).map(|k| waveform.value_at(k as f64 * dt_target)).collect();
    Ok(Waveform { dt: dt_target, samples, cycles: waveform.cycles, heart_rate: waveform.heart_rate })
}

pub fn format_waveform(w: &Waveform) -> String {
    let mut out = String::with_capacity(48 * w.samples.len() + 80);
    let _ = writeln!(out, "{HEADER_TAG}, hr_bpm={}, dt_s={}", w.heart_rate, w.dt);
    out.push_str("t_s,velocity_m_per_s\n");
    for (k, v) in w.samples.iter().enumerate() {
        let _ = writeln!(out, "{:.16e},{:.16e}", k as f64 * w.dt, v);
    }
    out
}

pub fn parse_waveform(text: &str) -> Result<Waveform, CardiacError> {
    let bad = |m: String| CardiacError::WaveformFormat(m);
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
    let rest = header.strip_prefix(HEADER_TAG).ok_or_else(|| bad(format!("unrecognised header {header:?}")))?;
    let (mut hr, mut dt) = (None, None);
    for field in rest.split(',').map(str::trim).filter(|f| !f.is_empty()) {
        let (k, v) = field.split_once('=').ok_or_else(|| bad(format!("bad header field {field:?}")))?;
        let v: f64 = v.parse().map_err(|_| bad(format!("bad number in {field:?}")))?;
        match k {
            "hr_bpm" => hr = Some(v),
            "dt_s" => dt = Some(v),
            _ => return Err(bad(format!("unknown header field {k:?}"))),
        }
    }
    let (heart_rate, dt) = match (hr, dt) {
        (Some(h), Some(d)) if h > 0.0 && d > 0.0 => (h, d),
        _ => return Err(bad("header needs positive hr_bpm and dt_s".into())),
    };
    if lines.next().map(str::trim) != Some("t_s,velocity_m_per_s") {
        return Err(bad("missing column header".into()));
    }
    let mut samples = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v = line
            .split(',')
            .nth(1)
            .and_then(|v| v.trim().parse::<f64>().ok())
            .ok_or_else(|| bad(format!("bad row {}: {line:?}", n + 3)))?;
        samples.push(v);
    }
    if samples.is_empty() {
        return Err(CardiacError::EmptyWaveform);
    }
    let cycles = ((samples.len() as f64 * dt) / (60.0 / heart_rate)).round().max(1.0) as usize;
    Ok(Waveform { dt, samples, cycles, heart_rate })
}

pub fn write_waveform(w: &Waveform, path: &Path) -> Result<(), CardiacError> {
    fs::write(path, format_waveform(w))?;
    Ok(())
}

pub fn read_waveform(path: &Path) -> Result<Waveform, CardiacError> {
    parse_waveform(&fs::read_to_string(path)?)
}
