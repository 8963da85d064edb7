use nalgebra::{DMatrix, DVector};

use super::{CardiacError, PatientConfig, Waveform};

/// Default number of simulated cardiac cycles.
pub const DEFAULT_CYCLES: usize = 10;
/// Default (and largest accepted) network time step, s.
pub const DEFAULT_DT: f64 = 0.005;

/// Standard network: compliances (aorta, cerebral, MCA bed) in m³/Pa, then
/// resistances (aortic impedance, carotid, MCA, MCA bed, other cerebral,
/// systemic) in Pa·s/m³.
const STANDARD: [f64; 9] = [1.1e-8, 1.0e-10, 1.0e-10, 1.1e7, 8.3e7, 1.4e9, 2.0e9, 9.6e8, 1.4e8];

/// Fraction of the cycle spent in systolic ejection.
const SYSTOLE_FRACTION: f64 = 1.0 / 3.0;
const FACTOR_BOUNDS: (f64, f64) = (0.1, 10.0);

/// Pulsatile aortic inflow (m³/s): a half-sine over the first third of each
/// period, zero in diastole, integrating to one stroke volume per cycle.
pub fn aortic_inflow(config: &PatientConfig, t: f64) -> f64 {
    let period = config.period();
    let ejection = SYSTOLE_FRACTION * period;
    let phase = t.rem_euclid(period);
    if phase >= ejection {
        return 0.0;
    }
    let peak = config.stroke_volume() * std::f64::consts::PI / (2.0 * ejection);
    peak * (std::f64::consts::PI * phase / ejection).sin()
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkNode {
    pub name: String,
    /// m³/Pa; zero makes the node purely resistive.
    pub compliance: f64,
}

/// Resistive element from node `from` to node `to`, or to venous pressure
/// when `to` is `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub name: String,
    pub from: usize,
    pub to: Option<usize>,
    /// Pa·s/m³.
    pub resistance: f64,
}

/// Lumped resistance/compliance tree fed by the aortic inflow at node 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ArterialNetwork {
    pub nodes: Vec<NetworkNode>,
    pub segments: Vec<Segment>,
    /// Segment whose flow is reported as MCA flow.
    pub mca_segment: usize,
    /// m².
    pub mca_area: f64,
    /// Segment whose resistance is scaled by `autoregulation`.
    pub autoregulated_segment: usize,
    pub autoregulation: f64,
    /// Segment whose resistance is set per config so that the whole tree
    /// presents mean pressure / cardiac output; `None` keeps it fixed.
    pub peripheral_segment: Option<usize>,
    /// Pa.
    pub venous_pressure: f64,
}

impl ArterialNetwork {
    /// Aortic root with a characteristic impedance into a compliant aorta and
    /// systemic periphery; a carotid off the root feeds the MCA and the
    /// remaining cerebral territory. The MCA drains into a compliant distal
    /// bed whose resistance carries the autoregulation factor, so the factor
    /// sets the mean MCA flow while the pressure pulse still reaches the MCA.
    pub fn standard() -> Self {
        Self::standard_with(STANDARD)
    }

    fn standard_with(p: [f64; 9]) -> Self {
        let [c_ao, c_cer, c_bed, z_c, r_car, r_mca, r_bed, r_oth, r_sys] = p;
        let node = |name: &str, c: f64| NetworkNode { name: name.into(), compliance: c };
        let seg =
            |name: &str, from: usize, to: Option<usize>, r: f64| Segment { name: name.into(), from, to, resistance: r };
        Self {
            nodes: vec![node("aortic_root", 0.0), node("aorta", c_ao), node("cerebral", c_cer), node("mca_bed", c_bed)],
            segments: vec![
                seg("ascending", 0, Some(1), z_c),
                seg("systemic", 1, None, r_sys),
                seg("carotid", 0, Some(2), r_car),
                seg("mca", 2, Some(3), r_mca),
                seg("mca_distal", 3, None, r_bed),
                seg("other_cerebral", 2, None, r_oth),
            ],
            mca_segment: 3,
            mca_area: std::f64::consts::PI * 1.4e-3 * 1.4e-3,
            autoregulated_segment: 4,
            autoregulation: 1.0,
            peripheral_segment: Some(1),
            venous_pressure: 0.0,
        }
    }

    pub fn with_autoregulation(&self, factor: f64) -> Self {
        Self { autoregulation: factor, ..self.clone() }
    }

    pub fn validate(&self) -> Result<(), CardiacError> {
        let bad = |m: String| Err(CardiacError::InvalidNetwork(m));
        let n = self.nodes.len();
        if n == 0 {
            return bad("no nodes".into());
        }
        if !(self.mca_area > 0.0) {
            return bad("MCA area must be positive".into());
        }
        if !(self.autoregulation > 0.0) {
            return bad("autoregulation factor must be positive".into());
        }
        for node in &self.nodes {
            if !(node.compliance >= 0.0) {
                return bad(format!("node {}: negative compliance", node.name));
            }
        }
        let mut parents = vec![0usize; n];
        let mut outgoing = vec![0usize; n];
        for s in &self.segments {
            if !(s.resistance > 0.0) {
                return bad(format!("segment {}: resistance must be positive", s.name));
            }
            if s.from >= n || s.to.is_some_and(|t| t >= n || t == 0) {
                return bad(format!("segment {}: bad endpoints", s.name));
            }
            outgoing[s.from] += 1;
            if let Some(t) = s.to {
                parents[t] += 1;
            }
        }
        for k in 1..n {
            if parents[k] != 1 {
                return bad(format!("node {} needs exactly one parent", self.nodes[k].name));
            }
        }
        if outgoing.contains(&0) {
            return bad("every node needs an outgoing segment".into());
        }
        // Reachability from the root rules out cycles in a one-parent graph.
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(k) = stack.pop() {
            for s in self.segments.iter().filter(|s| s.from == k) {
                if let Some(t) = s.to {
                    if !seen[t] {
                        seen[t] = true;
                        stack.push(t);
                    }
                }
            }
        }
        if !seen.iter().all(|&v| v) {
            return bad("tree is not connected to the root".into());
        }
        if self.mca_segment >= self.segments.len() || self.autoregulated_segment >= self.segments.len() {
            return bad("MCA or autoregulated segment out of range".into());
        }
        if self.peripheral_segment.is_some_and(|p| p >= self.segments.len()) {
            return bad("peripheral segment out of range".into());
        }
        Ok(())
    }

    fn effective_resistance(&self, segment: usize) -> f64 {
        let s = &self.segments[segment];
        let r = if segment == self.autoregulated_segment { s.resistance * self.autoregulation } else { s.resistance };
        match s.to {
            None => r,
            Some(node) => r + self.node_resistance(node, None),
        }
    }

    /// Equivalent DC resistance downstream of `node`, optionally skipping one segment.
    fn node_resistance(&self, node: usize, skip: Option<usize>) -> f64 {
        let g: f64 = (0..self.segments.len())
            .filter(|&k| self.segments[k].from == node && Some(k) != skip)
            .map(|k| 1.0 / self.effective_resistance(k))
            .sum();
        1.0 / g
    }

    /// Per-segment resistances for `config`, with the autoregulation factor
    /// and the peripheral fit applied.
    fn resolved(&self, config: &PatientConfig) -> Result<ArterialNetwork, CardiacError> {
        self.validate()?;
        let mut net = self.clone();
        net.segments[net.autoregulated_segment].resistance *= net.autoregulation;
        net.autoregulation = 1.0;
        if let Some(p) = net.peripheral_segment {
            let target = (config.pressure_pa() - net.venous_pressure) / config.cardiac_output_m3_s();
            // Total resistance grows monotonically with any one segment's resistance.
            let total = |net: &mut ArterialNetwork, r: f64| {
                net.segments[p].resistance = r;
                net.node_resistance(0, None)
            };
            let (mut lo, mut hi) = (1.0f64.ln(), 1e16f64.ln());
            let reach = (total(&mut net, lo.exp()), total(&mut net, hi.exp()));
            if !target.is_finite() || target < reach.0 || target > reach.1 {
                return Err(CardiacError::InvalidNetwork(format!(
                    "total resistance {target:.4e} Pa·s/m³ outside reachable [{:.4e}, {:.4e}]",
                    reach.0, reach.1
                )));
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if total(&mut net, mid.exp()) < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            total(&mut net, (0.5 * (lo + hi)).exp());
        }
        Ok(net)
    }
}

/// Full time history of a network simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkTrace {
    pub dt: f64,
    pub inflow: Vec<f64>,
    /// Node pressures per step, Pa.
    pub pressures: Vec<Vec<f64>>,
    /// Segment flows per step, m³/s.
    pub flows: Vec<Vec<f64>>,
    /// Pressures before the first step.
    pub initial_pressures: Vec<f64>,
    pub compliances: Vec<f64>,
    pub segments: Vec<Segment>,
    pub cycles: usize,
}

/// Backward-Euler integration of `C dP/dt = inflow - G P + g P_venous`
/// started from the DC solution for the mean inflow.
pub fn simulate_trace(
    config: &PatientConfig,
    network: &ArterialNetwork,
    cycles: usize,
    dt: f64,
) -> Result<NetworkTrace, CardiacError> {
    config.validate()?;
    if !(dt > 0.0) || dt > DEFAULT_DT * (1.0 + 1e-12) || cycles < 2 {
        return Err(CardiacError::BadSimulationSetup { dt, cycles });
    }
    let net = network.resolved(config)?;
    let period = config.period();
    // Whole number of steps per cycle, never coarser than requested.
    let per_cycle = (period / dt - 1e-9).ceil() as usize;
    let dt = period / per_cycle as f64;
    let n = net.nodes.len();

    let mut g = DMatrix::<f64>::zeros(n, n);
    let mut venous = DVector::<f64>::zeros(n);
    for s in &net.segments {
        let c = 1.0 / s.resistance;
        g[(s.from, s.from)] += c;
        match s.to {
            Some(t) => {
                g[(t, t)] += c;
                g[(s.from, t)] -= c;
                g[(t, s.from)] -= c;
            }
            None => venous[s.from] += c * net.venous_pressure,
        }
    }
    let cap = DVector::from_iterator(n, net.nodes.iter().map(|nd| nd.compliance));

    let mean_inflow = config.cardiac_output_m3_s();
    let mut b0 = venous.clone();
    b0[0] += mean_inflow;
    let dc = g.clone().lu();
    let mut p = dc.solve(&b0).ok_or_else(|| CardiacError::InvalidNetwork("singular conductance matrix".into()))?;
    let initial_pressures = p.iter().copied().collect();

    let system = (g + DMatrix::from_diagonal(&(&cap / dt))).lu();
    let steps = per_cycle * cycles;
    let mut trace = NetworkTrace {
        dt,
        inflow: Vec::with_capacity(steps),
        pressures: Vec::with_capacity(steps),
        flows: Vec::with_capacity(steps),
        initial_pressures,
        compliances: cap.iter().copied().collect(),
        segments: net.segments.clone(),
        cycles,
    };
    for k in 0..steps {
        let t = k as f64 * dt;
        let q_in = aortic_inflow(config, t);
        let mut rhs = cap.component_mul(&p) / dt + &venous;
        rhs[0] += q_in;
        p = system.solve(&rhs).ok_or_else(|| CardiacError::InvalidNetwork("singular system matrix".into()))?;
        let flows: Vec<f64> = net
            .segments
            .iter()
            .map(|s| (p[s.from] - s.to.map_or(net.venous_pressure, |t| p[t])) / s.resistance)
            .collect();
        if p.iter().any(|v| !v.is_finite()) || flows.iter().any(|v| !v.is_finite()) {
            return Err(CardiacError::NetworkUnstable { t, reason: "non-finite state".into() });
        }
        if p.iter().any(|&v| v < net.venous_pressure) {
            return Err(CardiacError::NetworkUnstable { t, reason: "pressure below venous pressure".into() });
        }
        trace.inflow.push(q_in);
        trace.pressures.push(p.iter().copied().collect());
        trace.flows.push(flows);
    }
    Ok(trace)
}

/// MCA mean-velocity waveform (flow / MCA area) over `cycles` cycles.
pub fn simulate_network(
    config: &PatientConfig,
    network: &ArterialNetwork,
    cycles: usize,
    dt: f64,
) -> Result<Waveform, CardiacError> {
    let trace = simulate_trace(config, network, cycles, dt)?;
    let samples: Vec<f64> = trace.flows.iter().map(|f| f[network.mca_segment] / network.mca_area).collect();
    Ok(Waveform { dt: trace.dt, samples, cycles, heart_rate: config.heart_rate_bpm })
}

fn mean_velocity(config: &PatientConfig, network: &ArterialNetwork, factor: f64) -> Result<f64, CardiacError> {
    let w = simulate_network(config, &network.with_autoregulation(factor), DEFAULT_CYCLES, DEFAULT_DT)?;
    Ok(w.last_cycles(2).mean())
}

/// Per-config autoregulation factor that makes the simulated mean MCA
/// velocity (last two cycles) hit the target. Bisection in log space over
/// [0.1, 10].
pub fn calibrate_autoregulation(
    configs: &[PatientConfig],
    network: &ArterialNetwork,
    targets: &[f64],
) -> Result<Vec<f64>, CardiacError> {
    if configs.len() != targets.len() {
        return Err(CardiacError::InvalidConfig {
            label: String::new(),
            reason: format!("{} configs but {} targets", configs.len(), targets.len()),
        });
    }
    let mut factors = Vec::with_capacity(configs.len());
    for (config, &target) in configs.iter().zip(targets) {
        if !(target > 0.0) {
            return Err(CardiacError::InvalidConfig {
                label: config.label.clone(),
                reason: format!("target {target} must be positive"),
            });
        }
        let (lo_f, hi_f) = FACTOR_BOUNDS;
        // Velocity falls as the resistance factor grows.
        let v_hi = mean_velocity(config, network, lo_f)?;
        let v_lo = mean_velocity(config, network, hi_f)?;
        if target > v_hi || target < v_lo {
            return Err(CardiacError::CalibrationFailed { label: config.label.clone(), target, lo: v_lo, hi: v_hi });
        }
        let (mut a, mut b) = (lo_f.ln(), hi_f.ln());
        while b - a > 1e-12 {
            let m = 0.5 * (a + b);
            if mean_velocity(config, network, m.exp())? > target {
                a = m;
            } else {
                b = m;
            }
        }
        factors.push((0.5 * (a + b)).exp());
    }
    Ok(factors)
}

/// Waveforms for a whole config set. Configs with a target velocity are
/// calibrated; the others take a factor interpolated linearly in intensity
/// between calibrated neighbours (held constant beyond the ends), or the
/// network's own factor if nothing is calibrated.
pub fn waveform_for(
    configs: &[PatientConfig],
    network: &ArterialNetwork,
    cycles: usize,
    dt: f64,
) -> Result<Vec<(Waveform, f64)>, CardiacError> {
    let mut known: Vec<(f64, f64)> = Vec::new();
    for c in configs {
        if let Some(v) = c.target_mca_velocity {
            let f = calibrate_autoregulation(std::slice::from_ref(c), network, &[v])?[0];
            known.push((c.intensity_pct_vt, f));
        }
    }
    known.sort_by(|a, b| a.0.total_cmp(&b.0));
    configs
        .iter()
        .map(|c| {
            let factor = interpolate_factor(&known, c.intensity_pct_vt).unwrap_or(network.autoregulation);
            let w = simulate_network(c, &network.with_autoregulation(factor), cycles, dt)?;
            Ok((w, factor))
        })
        .collect()
}

fn interpolate_factor(known: &[(f64, f64)], x: f64) -> Option<f64> {
    let first = known.first()?;
    let last = known.last()?;
    if x <= first.0 {
        return Some(first.1);
    }
    if x >= last.0 {
        return Some(last.1);
    }
    known.windows(2).find(|w| x >= w[0].0 && x <= w[1].0).map(|w| {
        let s = (x - w[0].0) / (w[1].0 - w[0].0);
        w[0].1 + s * (w[1].1 - w[0].1)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cardiac::reference_configs;

    #[test]
    fn peak_rises_as_mean_falls() {
        let configs = reference_configs();
        let out = waveform_for(&configs, &ArterialNetwork::standard(), DEFAULT_CYCLES, DEFAULT_DT).unwrap();
        let tails: Vec<Waveform> = out.iter().map(|(w, _)| w.last_cycles(1)).collect();
        for pair in tails.windows(2) {
            assert!(pair[1].max() > pair[0].max());
            assert!(pair[1].mean() < pair[0].mean());
        }
        assert!(tails.iter().all(|w| w.min() > 0.0));
    }

    #[test]
    fn stroke_volume_per_cycle() {
        let rest = &reference_configs()[0];
        // Composite Simpson quadrature over one period.
        let n = 20_000;
        let h = rest.period() / n as f64;
        let mut sum = aortic_inflow(rest, 0.0) + aortic_inflow(rest, rest.period() - 1e-15);
        for k in 1..n {
            sum += aortic_inflow(rest, k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        let volume_ml = sum * h / 3.0 * 1e6;
        let expected = 4.8e3 / 68.0;
        assert!((volume_ml - expected).abs() / expected < 1e-3, "{volume_ml} vs {expected}");
    }

    #[test]
    fn diastole_is_zero() {
        let c = &reference_configs()[6];
        assert_eq!(aortic_inflow(c, c.period() - 1e-6), 0.0);
        assert_eq!(aortic_inflow(c, 0.5 * c.period()), 0.0);
        assert!(aortic_inflow(c, c.period() / 6.0) > 0.0);
    }

    fn divider() -> ArterialNetwork {
        ArterialNetwork {
            nodes: vec![NetworkNode { name: "root".into(), compliance: 0.0 }],
            segments: vec![
                Segment { name: "a".into(), from: 0, to: None, resistance: 3.0e8 },
                Segment { name: "b".into(), from: 0, to: None, resistance: 1.0e9 },
            ],
            mca_segment: 1,
            mca_area: 1e-5,
            autoregulated_segment: 1,
            autoregulation: 1.0,
            peripheral_segment: None,
            venous_pressure: 0.0,
        }
    }

    #[test]
    fn resistive_tree_divides_flow() {
        let c = &reference_configs()[0];
        let net = divider();
        let w = simulate_network(c, &net, 2, 0.005).unwrap();
        let trace = simulate_trace(c, &net, 2, 0.005).unwrap();
        let (ga, gb) = (1.0 / 3.0e8, 1.0 / 1.0e9);
        for (k, q) in trace.inflow.iter().enumerate() {
            let expected = q * gb / (ga + gb) / 1e-5;
            assert!((w.samples[k] - expected).abs() <= 1e-12 * expected.abs().max(1e-12));
        }
    }

    #[test]
    fn doubling_area_halves_velocity() {
        let c = &reference_configs()[2];
        let net = ArterialNetwork::standard();
        let a = simulate_network(c, &net, 3, 0.005).unwrap();
        let mut wide = net.clone();
        wide.mca_area *= 2.0;
        let b = simulate_network(c, &wide, 3, 0.005).unwrap();
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert_eq!(*y, x / 2.0);
        }
    }

    #[test]
    fn last_cycles_are_periodic() {
        for c in reference_configs() {
            let w = simulate_network(&c, &ArterialNetwork::standard(), DEFAULT_CYCLES, DEFAULT_DT).unwrap();
            let per = w.samples_per_cycle();
            let n = w.samples.len();
            let (a, b) = (&w.samples[n - 2 * per..n - per], &w.samples[n - per..]);
            let rms = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
            let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
            assert!(rms(&diff) / rms(b) < 5e-3, "{}: {}", c.label, rms(&diff) / rms(b));
            assert_eq!(n, DEFAULT_CYCLES * per);
            assert!(w.samples.iter().all(|&v| v >= 0.0 && v.is_finite()));
        }
    }

    #[test]
    fn nodes_conserve_flow() {
        let c = &reference_configs()[4];
        let trace = simulate_trace(c, &ArterialNetwork::standard(), 3, 0.005).unwrap();
        let mut prev = trace.initial_pressures.clone();
        for k in 0..trace.inflow.len() {
            let p = &trace.pressures[k];
            for node in 0..p.len() {
                let mut net_in = if node == 0 { trace.inflow[k] } else { 0.0 };
                let mut scale = net_in.abs();
                for (s, seg) in trace.segments.iter().enumerate() {
                    let q = trace.flows[k][s];
                    if seg.from == node {
                        net_in -= q;
                    }
                    if seg.to == Some(node) {
                        net_in += q;
                    }
                    scale = scale.max(q.abs());
                }
                let storage = trace.compliances[node] * (p[node] - prev[node]) / trace.dt;
                assert!((net_in - storage).abs() <= 1e-9 * scale, "node {node} step {k}");
            }
            prev = p.clone();
        }
    }

    #[test]
    fn period_matches_heart_rate() {
        let c = &reference_configs()[6];
        let w = simulate_network(c, &ArterialNetwork::standard(), 4, 0.005).unwrap();
        assert!((w.samples_per_cycle() as f64 * w.dt - 60.0 / 134.0).abs() < 1e-12);
        assert!(w.dt <= 0.005);
        assert_eq!(w.samples.len(), 4 * w.samples_per_cycle());
    }

    #[test]
    fn calibration_hits_targets() {
        let configs = reference_configs();
        let targets: Vec<f64> = configs.iter().map(|c| c.target_mca_velocity.unwrap()).collect();
        let net = ArterialNetwork::standard();
        let factors = calibrate_autoregulation(&configs, &net, &targets).unwrap();
        for ((c, f), t) in configs.iter().zip(&factors).zip(&targets) {
            let v = mean_velocity(c, &net, *f).unwrap();
            assert!((v - t).abs() / t < 5e-3, "{}: {v} vs {t}", c.label);
        }
        assert!(factors.windows(2).all(|w| w[1] > w[0]), "{factors:?}");
    }

    #[test]
    fn calibration_fixed_point() {
        let c = &reference_configs()[1];
        let net = ArterialNetwork::standard();
        let v = mean_velocity(c, &net, 1.0).unwrap();
        let f = calibrate_autoregulation(std::slice::from_ref(c), &net, &[v]).unwrap()[0];
        assert!((f - 1.0).abs() < 1e-6, "{f}");
    }

    #[test]
    fn unreachable_target_fails() {
        let c = &reference_configs()[0];
        let r = calibrate_autoregulation(std::slice::from_ref(c), &ArterialNetwork::standard(), &[50.0]);
        assert!(matches!(r, Err(CardiacError::CalibrationFailed { .. })));
    }

    #[test]
    fn invalid_networks_rejected() {
        let mut net = ArterialNetwork::standard();
        net.segments[1].resistance = 0.0;
        assert!(net.validate().is_err());
        let mut net = ArterialNetwork::standard();
        net.segments.push(Segment { name: "loop".into(), from: 1, to: Some(1), resistance: 1.0 });
        assert!(net.validate().is_err());
        let mut net = ArterialNetwork::standard();
        net.mca_area = 0.0;
        assert!(net.validate().is_err());
        assert!(ArterialNetwork::standard().validate().is_ok());
    }

    #[test]
    fn setup_preconditions() {
        let c = &reference_configs()[0];
        let net = ArterialNetwork::standard();
        assert!(matches!(simulate_network(c, &net, 1, 0.005), Err(CardiacError::BadSimulationSetup { .. })));
        assert!(matches!(simulate_network(c, &net, 3, 0.01), Err(CardiacError::BadSimulationSetup { .. })));
    }

    #[test]
    fn uncalibrated_rows_interpolate_factor() {
        let mut configs = reference_configs();
        configs[1].target_mca_velocity = None;
        let out = waveform_for(&configs, &ArterialNetwork::standard(), 3, 0.005).unwrap();
        let f: Vec<f64> = out.iter().map(|(_, f)| *f).collect();
        let expected = f[0] + (f[2] - f[0]) * 30.0 / 50.0;
        assert!((f[1] - expected).abs() < 1e-12);
    }
}
