use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CardiacError;

/// Intensity (% VT) at which the resting row sits when interpolating.
pub const REST_PLACEMENT_PCT_VT: f64 = 10.0;

/// Intensities filled in between rest and the first measured row.
const INTERPOLATED_PCT_VT: [f64; 2] = [30.0, 50.0];

/// One exercise-intensity configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientConfig {
    pub label: String,
    /// Percent of ventilatory threshold; 0 is rest.
    pub intensity_pct_vt: f64,
    pub pressure_mmhg: f64,
    pub cardiac_output_l_min: f64,
    pub heart_rate_bpm: f64,
    /// Mean MCA velocity the network is calibrated to, if known.
    pub target_mca_velocity: Option<f64>,
}

impl PatientConfig {
    pub fn new(label: &str, intensity: f64, pressure: f64, co: f64, hr: f64) -> Self {
        Self {
            label: label.to_string(),
            intensity_pct_vt: intensity,
            pressure_mmhg: pressure,
            cardiac_output_l_min: co,
            heart_rate_bpm: hr,
            target_mca_velocity: None,
        }
    }

    pub fn with_target(mut self, v: f64) -> Self {
        self.target_mca_velocity = Some(v);
        self
    }

    pub fn validate(&self) -> Result<(), CardiacError> {
        let bad =
            |reason: &str| Err(CardiacError::InvalidConfig { label: self.label.clone(), reason: reason.to_string() });
        if self.label.is_empty() || !self.label.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return bad("label must be non-empty [A-Za-z0-9_-]");
        }
        if !(self.intensity_pct_vt >= 0.0) {
            return bad("intensity must be >= 0");
        }
        if !(self.pressure_mmhg > 0.0) || !(self.cardiac_output_l_min > 0.0) {
            return bad("pressure and cardiac output must be positive");
        }
        if !(30.0..=220.0).contains(&self.heart_rate_bpm) {
            return bad("heart rate must lie in [30, 220] bpm");
        }
        if let Some(v) = self.target_mca_velocity {
            if !(v > 0.0) || !v.is_finite() {
                return bad("target velocity must be positive");
            }
        }
        Ok(())
    }

    pub fn period(&self) -> f64 {
        60.0 / self.heart_rate_bpm
    }

    /// Mean arterial pressure in Pa.
    pub fn pressure_pa(&self) -> f64 {
        self.pressure_mmhg * 133.322_387_415
    }

    /// Cardiac output in m³/s.
    pub fn cardiac_output_m3_s(&self) -> f64 {
        self.cardiac_output_l_min * 1e-3 / 60.0
    }

    /// Stroke volume in m³.
    pub fn stroke_volume(&self) -> f64 {
        self.cardiac_output_m3_s() * self.period()
    }
}

fn label_for(intensity: f64) -> String {
    if intensity == 0.0 {
        "rest".to_string()
    } else {
        format!("vt{intensity:.0}")
    }
}

/// The seven-row exercise table: rest, the two interpolated rows and the
/// four measured rows, each with its mean MCA velocity.
pub fn reference_configs() -> Vec<PatientConfig> {
    let rows = [
        (0.0, 80.0, 4.8, 68.0, 0.460),
        (30.0, 87.0, 6.2, 79.0, 0.451),
        (50.0, 94.0, 7.6, 90.0, 0.428),
        (70.0, 100.0, 9.0, 101.0, 0.393),
        (90.0, 112.0, 10.7, 113.0, 0.371),
        (110.0, 116.0, 11.9, 120.0, 0.351),
        (130.0, 122.0, 13.2, 134.0, 0.339),
    ];
    rows.iter().map(|&(i, p, co, hr, v)| PatientConfig::new(&label_for(i), i, p, co, hr).with_target(v)).collect()
}

/// Rest plus measured rows (first at the lowest measured intensity) to the
/// full set: 30% and 50% VT are interpolated on the rest-to-first-measured
/// segment with rest placed at [`REST_PLACEMENT_PCT_VT`]. Cardiac output is
/// kept to 0.1 L/min, heart rate to whole bpm, and pressure is rounded up
/// to whole mmHg.
pub fn build_configs(rest: &PatientConfig, measured: &[PatientConfig]) -> Result<Vec<PatientConfig>, CardiacError> {
    rest.validate()?;
    let mut intensities = vec![rest.intensity_pct_vt];
    intensities.extend(measured.iter().map(|c| c.intensity_pct_vt));
    let first = match measured.first() {
        Some(f) => f,
        None => return Err(CardiacError::NonMonotonicIntensities(intensities)),
    };
    let increasing = measured.windows(2).all(|w| w[1].intensity_pct_vt > w[0].intensity_pct_vt);
    if rest.intensity_pct_vt != 0.0 || !increasing || first.intensity_pct_vt <= INTERPOLATED_PCT_VT[1] {
        return Err(CardiacError::NonMonotonicIntensities(intensities));
    }
    for m in measured {
        m.validate()?;
    }

    let span = first.intensity_pct_vt - REST_PLACEMENT_PCT_VT;
    let lerp = |a: f64, b: f64, x: f64| a + (b - a) * (x - REST_PLACEMENT_PCT_VT) / span;
    let mut out = vec![rest.clone()];
    for &x in &INTERPOLATED_PCT_VT {
        out.push(PatientConfig {
            label: label_for(x),
            intensity_pct_vt: x,
            pressure_mmhg: lerp(rest.pressure_mmhg, first.pressure_mmhg, x).ceil(),
            cardiac_output_l_min: (lerp(rest.cardiac_output_l_min, first.cardiac_output_l_min, x) * 10.0).round()
                / 10.0,
            heart_rate_bpm: lerp(rest.heart_rate_bpm, first.heart_rate_bpm, x).round(),
            target_mca_velocity: None,
        });
    }
    out.extend(measured.iter().cloned());
    Ok(out)
}

/// Applies [`build_configs`] when `rows` is a rest row plus measured rows
/// with nothing in between; any other set is returned unchanged after
/// validation.
pub fn expand_configs(rows: Vec<PatientConfig>) -> Result<Vec<PatientConfig>, CardiacError> {
    for r in &rows {
        r.validate()?;
    }
    let has_rest = rows.first().is_some_and(|r| r.intensity_pct_vt == 0.0);
    let gap = rows.iter().skip(1).all(|r| r.intensity_pct_vt > INTERPOLATED_PCT_VT[1]);
    if has_rest && rows.len() > 1 && gap {
        build_configs(&rows[0], &rows[1..])
    } else {
        Ok(rows)
    }
}

const KEYS: [&str; 6] =
    ["label", "intensity_pct_vt", "pressure_mmHg", "cardiac_output_l_min", "heart_rate_bpm", "target_mca_velocity_m_s"];

/// Parses `key = value` blocks separated by blank lines; `#` starts a comment.
pub fn parse_configs(text: &str) -> Result<Vec<PatientConfig>, CardiacError> {
    let mut configs = Vec::new();
    let mut block: Vec<(usize, String, String)> = Vec::new();
    let lines: Vec<&str> = text.lines().collect();
    for (n, raw) in lines.iter().enumerate().chain(std::iter::once((lines.len(), &""))) {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            if !block.is_empty() {
                configs.push(config_from_block(&block)?);
                block.clear();
            }
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| CardiacError::Parse {
            line: n + 1,
            reason: format!("expected key = value, got {line:?}"),
        })?;
        let k = k.trim();
        if !KEYS.contains(&k) {
            return Err(CardiacError::Parse { line: n + 1, reason: format!("unknown key {k:?}") });
        }
        if block.iter().any(|(_, seen, _)| seen == k) {
            return Err(CardiacError::Parse { line: n + 1, reason: format!("duplicate key {k:?}") });
        }
        block.push((n + 1, k.to_string(), v.trim().to_string()));
    }
    if configs.is_empty() {
        return Err(CardiacError::Parse { line: 0, reason: "no configurations".into() });
    }
    Ok(configs)
}

fn config_from_block(block: &[(usize, String, String)]) -> Result<PatientConfig, CardiacError> {
    let first_line = block[0].0;
    let get = |key: &str| block.iter().find(|(_, k, _)| k == key);
    let num = |key: &str| -> Result<Option<f64>, CardiacError> {
        match get(key) {
            None => Ok(None),
            Some((line, _, v)) => v
                .parse::<f64>()
                .map(Some)
                .map_err(|_| CardiacError::Parse { line: *line, reason: format!("{key}: not a number: {v:?}") }),
        }
    };
    let need = |key: &str| -> Result<f64, CardiacError> {
        num(key)?.ok_or_else(|| CardiacError::Parse { line: first_line, reason: format!("missing {key}") })
    };
    let label = get("label")
        .map(|(_, _, v)| v.clone())
        .ok_or_else(|| CardiacError::Parse { line: first_line, reason: "missing label".into() })?;
    let config = PatientConfig {
        label,
        intensity_pct_vt: need("intensity_pct_vt")?,
        pressure_mmhg: need("pressure_mmHg")?,
        cardiac_output_l_min: need("cardiac_output_l_min")?,
        heart_rate_bpm: need("heart_rate_bpm")?,
        target_mca_velocity: num("target_mca_velocity_m_s")?,
    };
    config.validate()?;
    Ok(config)
}

pub fn read_configs(path: &Path) -> Result<Vec<PatientConfig>, CardiacError> {
    parse_configs(&fs::read_to_string(path)?)
}

pub fn format_configs(configs: &[PatientConfig]) -> String {
    let mut out = String::new();
    for (k, c) in configs.iter().enumerate() {
        if k > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "label = {}", c.label);
        let _ = writeln!(out, "intensity_pct_vt = {}", c.intensity_pct_vt);
        let _ = writeln!(out, "pressure_mmHg = {}", c.pressure_mmhg);
        let _ = writeln!(out, "cardiac_output_l_min = {}", c.cardiac_output_l_min);
        let _ = writeln!(out, "heart_rate_bpm = {}", c.heart_rate_bpm);
        if let Some(v) = c.target_mca_velocity {
            let _ = writeln!(out, "target_mca_velocity_m_s = {v}");
        }
    }
    out
}

pub fn write_configs(configs: &[PatientConfig], path: &Path) -> Result<(), CardiacError> {
    fs::write(path, format_configs(configs))?;
    Ok(())
}
