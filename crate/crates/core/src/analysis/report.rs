use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{
    bin_width, cycle_window, dominant_frequency, line_chart, linear_fit, wss_site_stats, AnalysisError, LinearFit,
    Series,
};
use crate::cardiac::{read_waveform, Waveform};
use crate::extraction::{parse_probe_csv, parse_wss_csv, ProbeRecord, RunMeta, PROBE_FILE};

pub const WAVEFORM_FILE: &str = "waveform.csv";

/// Files written by [`cross_instance_report`].
pub const REPORT_FILES: [&str; 8] = [
    "velocity_compare.csv",
    "wss_stats.csv",
    "ratios.csv",
    "fit.csv",
    "velocity_compare.svg",
    "wss_stats.svg",
    "velocity_series.svg",
    "status.txt",
];

/// Everything a finished run left on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceData {
    pub meta: RunMeta,
    pub waveform: Waveform,
    pub probe: Vec<ProbeRecord>,
    /// WSS events as `(step, per-site values)` in step order.
    pub wss: Vec<(u64, Vec<f64>)>,
}

fn bad(path: &Path, reason: impl ToString) -> AnalysisError {
    AnalysisError::BadInput { path: path.display().to_string(), reason: reason.to_string() }
}

pub fn load_instance(dir: &Path) -> Result<InstanceData, AnalysisError> {
    let meta = RunMeta::read(dir).map_err(|e| bad(dir, e))?;
    let wpath = dir.join(WAVEFORM_FILE);
    let waveform = read_waveform(&wpath).map_err(|e| bad(&wpath, e))?;
    let ppath = dir.join(PROBE_FILE);
    let probe = parse_probe_csv(&fs::read_to_string(&ppath)?).map_err(|e| bad(&ppath, e))?;
    let mut wss = Vec::new();
    let mut coords = None;
    let mut files: Vec<(u64, PathBuf)> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            let step = name.strip_prefix("wss_")?.strip_suffix(".csv")?.parse().ok()?;
            Some((step, e.path()))
        })
        .collect();
    files.sort();
    for (step, path) in files {
        let rows = parse_wss_csv(&fs::read_to_string(&path)?).map_err(|e| bad(&path, e))?;
        let c: Vec<_> = rows.iter().map(|r| r.0).collect();
        match &coords {
            None => coords = Some(c),
            Some(prev) if *prev != c => return Err(bad(&path, "wall sites differ between events")),
            _ => {}
        }
        wss.push((step, rows.into_iter().map(|r| r.1).collect()));
    }
    Ok(InstanceData { meta, waveform, probe, wss })
}

/// Per-instance numbers entering the report.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceSummary {
    pub label: String,
    pub intensity: f64,
    pub heart_rate: f64,
    pub input_mean: f64,
    pub input_max: f64,
    pub input_min: f64,
    pub probe_max: f64,
    pub probe_mean: f64,
    pub probe_freq: f64,
    pub expected_freq: f64,
    pub freq_bin: f64,
    pub max_wss: f64,
    pub mean_wss: f64,
    pub slope_variability: f64,
    /// Whole cycles in the analysis window.
    pub cycles: f64,
}

impl InstanceSummary {
    pub fn pulse_amplitude(&self) -> f64 {
        self.input_max - self.input_min
    }
}

/// Reduces one instance over whole cycles after the warm-up; WSS samples are
/// taken every `interval` seconds.
pub fn summarize(data: &InstanceData, interval: f64) -> Result<InstanceSummary, AnalysisError> {
    let meta = &data.meta;
    let period = meta.period();
    let skip = if meta.warmup { 0.5 * period } else { 0.0 };

    let times: Vec<f64> = data.probe.iter().map(|r| r.t).collect();
    let w = cycle_window(&times, period, skip)?;
    let probe = &data.probe[w.clone()];
    let vmax: Vec<f64> = probe.iter().map(|r| r.v_max).collect();
    let probe_dt = meta.units.dt * meta.probe_cadence as f64;
    let probe_freq = dominant_frequency(&vmax, probe_dt)?;
    let cycles = ((times[w.end - 1] - times[w.start]) / period).round();

    let cycle = data.waveform.last_cycles(1);

    let wt: Vec<f64> = data.wss.iter().map(|(s, _)| meta.units.time_of(*s)).collect();
    let ww = cycle_window(&wt, period, skip)?;
    let event_dt = meta.units.dt * meta.wss_cadence as f64;
    let stride = ((interval / event_dt).round() as usize).max(1);
    let events: Vec<&Vec<f64>> = data.wss[ww].iter().step_by(stride).map(|e| &e.1).collect();
    let sites = events.first().map_or(0, |e| e.len());
    if sites == 0 {
        return Err(AnalysisError::TooFewSamples { needed: 1, got: 0 });
    }
    let (mut max_wss, mut mean_sum, mut slope_sum) = (0.0f64, 0.0, 0.0);
    let mut series = vec![0.0; events.len()];
    for s in 0..sites {
        for (k, e) in events.iter().enumerate() {
            series[k] = e[s];
        }
        let st = wss_site_stats(&series)?;
        max_wss = max_wss.max(st.max);
        mean_sum += st.mean;
        slope_sum += st.slope_variability;
    }

    Ok(InstanceSummary {
        label: meta.label.clone(),
        intensity: meta.intensity_pct_vt,
        heart_rate: meta.heart_rate_bpm,
        input_mean: cycle.mean(),
        input_max: cycle.max(),
        input_min: cycle.min(),
        probe_max: vmax.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        probe_mean: probe.iter().map(|r| r.v_mean).sum::<f64>() / probe.len() as f64,
        probe_freq,
        expected_freq: meta.heart_rate_bpm / 60.0,
        freq_bin: bin_width(vmax.len(), probe_dt),
        max_wss,
        mean_wss: mean_sum / sites as f64,
        slope_variability: slope_sum / sites as f64,
        cycles,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReportStatus {
    Complete,
    Partial { missing: Vec<String> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportSummary {
    pub rows: Vec<InstanceSummary>,
    pub mean_wss_fit: LinearFit,
    pub status: ReportStatus,
    pub files: Vec<PathBuf>,
}

fn velocity_csv(rows: &[InstanceSummary]) -> String {
    let mut out = String::from(
        "label,intensity_pct_vt,heart_rate_bpm,input_mean_m_s,input_max_m_s,probe_max_m_s,probe_mean_m_s,probe_freq_hz,expected_freq_hz,freq_bin_hz\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.label,
            r.intensity,
            r.heart_rate,
            r.input_mean,
            r.input_max,
            r.probe_max,
            r.probe_mean,
            r.probe_freq,
            r.expected_freq,
            r.freq_bin
        );
    }
    out
}

fn wss_csv(rows: &[InstanceSummary]) -> String {
    let mut out = String::from(
        "label,intensity_pct_vt,input_mean_m_s,pulse_amplitude_m_s,max_wss_pa,mean_wss_pa,slope_variability_pa,cycles\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            r.label,
            r.intensity,
            r.input_mean,
            r.pulse_amplitude(),
            r.max_wss,
            r.mean_wss,
            r.slope_variability,
            r.cycles
        );
    }
    out
}

/// Each instance relative to the first (lowest-intensity) row.
fn ratios_csv(rows: &[InstanceSummary]) -> String {
    let base = &rows[0];
    let mut out = String::from("label,heart_rate_ratio,max_wss_ratio,mean_wss_ratio,slope_variability_ratio\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6}",
            r.label,
            r.heart_rate / base.heart_rate,
            r.max_wss / base.max_wss,
            r.mean_wss / base.mean_wss,
            r.slope_variability / base.slope_variability
        );
    }
    out
}

fn fit_csv(fit: &LinearFit, rows: &[InstanceSummary]) -> String {
    let (lo, hi) =
        rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(r.mean_wss), b.max(r.mean_wss)));
    let span = hi - lo;
    let rel = if span > 0.0 { fit.intercept.abs() / span } else { f64::INFINITY };
    format!(
        "x,y,slope,intercept,r2,intercept_over_range\ninput_mean_m_s,mean_wss_pa,{:.6},{:.6},{:.6},{:.6}\n",
        fit.slope, fit.intercept, fit.r2, rel
    )
}

fn series(name: &str, rows: &[InstanceSummary], f: impl Fn(&InstanceSummary) -> f64, dashed: bool) -> Series {
    Series { name: name.into(), points: rows.iter().map(|r| (r.intensity, f(r))).collect(), dashed }
}

fn time_series_chart(instances: &[&InstanceData]) -> String {
    let mut s = Vec::new();
    for d in instances {
        let pts: Vec<(f64, f64)> = d.probe.iter().map(|r| (r.t, r.v_max)).collect();
        let input: Vec<(f64, f64)> = d.probe.iter().map(|r| (r.t, d.waveform.value_at(r.t))).collect();
        s.push(Series { name: format!("{} probe max", d.meta.label), points: pts, dashed: false });
        s.push(Series { name: format!("{} inlet", d.meta.label), points: input, dashed: true });
    }
    line_chart("Probe maximum and inlet mean velocity", "time (s)", "velocity (m/s)", &s)
}

/// Writes the cross-instance tables and charts into `out_dir`. Rows are
/// ordered by intensity. Missing labels from `expected` mark the report partial.
pub fn cross_instance_report(
    instances: &[InstanceData],
    expected: &[String],
    out_dir: &Path,
    interval: f64,
) -> Result<ReportSummary, AnalysisError> {
    let present: Vec<&str> = instances.iter().map(|d| d.meta.label.as_str()).collect();
    let missing: Vec<String> = expected.iter().filter(|l| !present.contains(&l.as_str())).cloned().collect();
    if instances.len() < 2 {
        return Err(AnalysisError::IncompleteEnsemble { missing });
    }
    let mut ordered: Vec<&InstanceData> = instances.iter().collect();
    ordered.sort_by(|a, b| a.meta.intensity_pct_vt.total_cmp(&b.meta.intensity_pct_vt));
    let rows = ordered.iter().map(|d| summarize(d, interval)).collect::<Result<Vec<_>, _>>()?;
    let x: Vec<f64> = rows.iter().map(|r| r.input_mean).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.mean_wss).collect();
    let fit = linear_fit(&x, &y)?;

    let status =
        if missing.is_empty() { ReportStatus::Complete } else { ReportStatus::Partial { missing: missing.clone() } };
    let status_text = match &status {
        ReportStatus::Complete => "complete\n".to_string(),
        ReportStatus::Partial { missing } => format!("partial\nincomplete ensemble, missing: {}\n", missing.join(",")),
    };
    let velocity_svg = line_chart(
        "Inlet and probe velocity by intensity",
        "intensity (% VT)",
        "velocity (m/s)",
        &[
            series("inlet mean", &rows, |r| r.input_mean, true),
            series("inlet max", &rows, |r| r.input_max, true),
            series("probe max", &rows, |r| r.probe_max, false),
            series("probe mean", &rows, |r| r.probe_mean, false),
        ],
    );
    let wss_svg = line_chart(
        "Wall shear stress by intensity",
        "intensity (% VT)",
        "WSS (Pa)",
        &[
            series("max", &rows, |r| r.max_wss, false),
            series("mean", &rows, |r| r.mean_wss, false),
            series("slope variability", &rows, |r| r.slope_variability, false),
        ],
    );
    let contents = [
        velocity_csv(&rows),
        wss_csv(&rows),
        ratios_csv(&rows),
        fit_csv(&fit, &rows),
        velocity_svg,
        wss_svg,
        time_series_chart(&ordered),
        status_text,
    ];
    fs::create_dir_all(out_dir)?;
    let mut files = Vec::new();
    for (name, text) in REPORT_FILES.iter().zip(contents) {
        let p = out_dir.join(name);
        fs::write(&p, text)?;
        files.push(p);
    }
    Ok(ReportSummary { rows, mean_wss_fit: fit, status, files })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::{FluidProperties, LatticeUnits};
    use std::f64::consts::PI;

    /// Synthetic instance whose probe and WSS follow `amp * sin` at the heart rate.
    fn synthetic(label: &str, intensity: f64, hr: f64, mean: f64, amp: f64) -> InstanceData {
        let units = LatticeUnits { dx: 1e-4, dt: 1e-3, tau: 0.6, velocity_scale: 0.1, pressure_scale: 10.5 };
        let period = 60.0 / hr;
        let steps = ((4.5 * period) / units.dt / 25.0).ceil() as u64 * 25;
        let v = |t: f64| mean + amp * (2.0 * PI * t / period).sin();
        let per = (period / 0.005).round() as usize;
        let wdt = period / per as f64;
        let waveform =
            Waveform { dt: wdt, samples: (0..per * 2).map(|k| v(k as f64 * wdt)).collect(), cycles: 2, heart_rate: hr };
        let probe = (1..=steps / 5)
            .map(|k| {
                let t = k as f64 * 5.0 * units.dt;
                ProbeRecord { step: k * 5, t, v_max: 2.0 * v(t), v_mean: v(t), p_mean: 0.0 }
            })
            .collect();
        let wss = (1..=steps / 25)
            .map(|k| {
                let t = k as f64 * 25.0 * units.dt;
                (k * 25, vec![10.0 * v(t), 12.0 * v(t)])
            })
            .collect();
        InstanceData {
            meta: RunMeta {
                label: label.into(),
                intensity_pct_vt: intensity,
                heart_rate_bpm: hr,
                steps,
                probe_cadence: 5,
                wss_cadence: 25,
                warmup: true,
                profile: "poiseuille".into(),
                probe_offset_m: 2e-4,
                units,
                fluid: FluidProperties::blood(),
            },
            waveform,
            probe,
            wss,
        }
    }

    #[test]
    fn summary_recovers_heart_rate_and_stats() {
        let d = synthetic("rest", 10.0, 68.0, 0.46, 0.1);
        let s = summarize(&d, 0.025).unwrap();
        assert!((s.probe_freq - 68.0 / 60.0).abs() <= s.freq_bin);
        assert_eq!(s.cycles, 4.0);
        assert!((s.input_mean - 0.46).abs() < 1e-9);
        assert!((s.mean_wss - 11.0 * 0.46).abs() < 0.05);
        assert!(s.max_wss <= 12.0 * 0.56 + 1e-9 && s.max_wss > 12.0 * 0.55);
    }

    #[test]
    fn report_orders_rows_and_marks_partial() {
        let dir = tempfile::tempdir().unwrap();
        let all = [
            synthetic("vt50", 50.0, 90.0, 0.428, 0.2),
            synthetic("rest", 10.0, 68.0, 0.46, 0.1),
            synthetic("vt30", 30.0, 79.0, 0.451, 0.15),
        ];
        let expected: Vec<String> = ["rest", "vt30", "vt50", "vt70"].iter().map(|s| s.to_string()).collect();
        let r = cross_instance_report(&all, &expected, dir.path(), 0.025).unwrap();
        assert_eq!(r.rows.iter().map(|r| r.label.as_str()).collect::<Vec<_>>(), ["rest", "vt30", "vt50"]);
        assert_eq!(r.status, ReportStatus::Partial { missing: vec!["vt70".into()] });
        for f in REPORT_FILES {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let status = fs::read_to_string(dir.path().join("status.txt")).unwrap();
        assert!(status.starts_with("partial") && status.contains("vt70"));
        assert!(r.mean_wss_fit.r2 > 0.99);
        assert!(r.rows[0].slope_variability < r.rows[1].slope_variability);

        let one = [synthetic("rest", 10.0, 68.0, 0.46, 0.1)];
        assert!(matches!(
            cross_instance_report(&one, &expected, dir.path(), 0.025),
            Err(AnalysisError::IncompleteEnsemble { .. })
        ));
    }

    #[test]
    fn instance_round_trips_through_files() {
        let d = synthetic("vt90", 90.0, 112.0, 0.371, 0.2);
        let dir = tempfile::tempdir().unwrap();
        d.meta.write(dir.path()).unwrap();
        crate::cardiac::write_waveform(&d.waveform, &dir.path().join(WAVEFORM_FILE)).unwrap();
        let mut probe = format!("{}\n", crate::extraction::PROBE_HEADER);
        for r in &d.probe {
            probe.push_str(&crate::extraction::format_probe_row(r));
            probe.push('\n');
        }
        fs::write(dir.path().join(PROBE_FILE), probe).unwrap();
        for (step, v) in &d.wss {
            let mut text = format!("{}\n", crate::extraction::WSS_HEADER);
            for (k, x) in v.iter().enumerate() {
                text.push_str(&format!("{k},0,0,{x:.9e}\n"));
            }
            fs::write(dir.path().join(crate::extraction::wss_file_name(*step)), text).unwrap();
        }
        let back = load_instance(dir.path()).unwrap();
        assert_eq!(back.wss.len(), d.wss.len());
        assert_eq!(back.wss.iter().map(|e| e.0).collect::<Vec<_>>(), d.wss.iter().map(|e| e.0).collect::<Vec<_>>());
        let a = summarize(&d, 0.025).unwrap();
        let b = summarize(&back, 0.025).unwrap();
        assert!((a.mean_wss - b.mean_wss).abs() < 1e-6);
        assert_eq!(a.probe_freq, b.probe_freq);
    }
}
