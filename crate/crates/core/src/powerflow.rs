//! Unbalanced three-phase forward-backward sweep for radial feeders.
//!
//! Loads are constant power, wye connected. Regulators are ideal single-phase
//! autotransformers at the receiving end of their segment, so the secondary
//! voltage is the downstream bus voltage on the regulated phase:
//!
//! ```text
//! V_child = a * (V_parent - Z * I_line),   I_line = a * I_secondary
//! ```
//!
//! Internally everything is in volts and amperes; results are per unit of
//! each bus's line-to-neutral base.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::feeder::{tap_ratio, FeederModel, Node, TAP_LIMIT};
use crate::phase::{Phase, PhaseSet};

pub const DEFAULT_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_MAX_ITERATIONS: usize = 100;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Net demand per (bus, phase): kW with loads positive and generation
/// negative, kvar with absorption positive and injection negative.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionSet {
    p_kw: Vec<[f64; 3]>,
    q_kvar: Vec<[f64; 3]>,
    phases: Vec<PhaseSet>,
}

impl InjectionSet {
    pub fn zero(feeder: &FeederModel) -> Self {
        let n = feeder.bus_count();
        InjectionSet {
            p_kw: vec![[0.0; 3]; n],
            q_kvar: vec![[0.0; 3]; n],
            phases: feeder.buses().iter().map(|b| b.phases).collect(),
        }
    }

    pub fn add(&mut self, node: Node, p_kw: f64, q_kvar: f64) -> Result<()> {
        if node.bus >= self.phases.len() || !self.phases[node.bus].contains(node.phase) {
            return Err(Error::Data(format!(
                "injection at bus index {} phase {} is not on the feeder",
                node.bus, node.phase
            )));
        }
        self.p_kw[node.bus][node.phase.index()] += p_kw;
        self.q_kvar[node.bus][node.phase.index()] += q_kvar;
        Ok(())
    }

    pub fn p_kw(&self, node: Node) -> f64 {
        self.p_kw[node.bus][node.phase.index()]
    }

    pub fn q_kvar(&self, node: Node) -> f64 {
        self.q_kvar[node.bus][node.phase.index()]
    }

    fn complex_va(&self, bus: usize, phase: Phase) -> Complex64 {
        let i = phase.index();
        Complex64::new(self.p_kw[bus][i], self.q_kvar[bus][i]) * 1000.0
    }
}

/// One instant of operation: active demand per load, output per PV system and
/// reactive setpoints per PV inverter (positive = injection).
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingPoint {
    pub load_kw: Vec<f64>,
    pub load_kvar: Vec<f64>,
    pub pv_kw: Vec<f64>,
    pub pv_kvar: Vec<f64>,
}

impl OperatingPoint {
    /// Every load at its nominal demand and every PV dark.
    pub fn nominal(feeder: &FeederModel) -> Self {
        let load_kw: Vec<f64> = feeder.loads().iter().map(|l| l.peak_kw).collect();
        let load_kvar = feeder
            .loads()
            .iter()
            .zip(&load_kw)
            .map(|(l, &kw)| l.kvar_for(kw))
            .collect();
        OperatingPoint {
            load_kw,
            load_kvar,
            pv_kw: vec![0.0; feeder.pv().len()],
            pv_kvar: vec![0.0; feeder.pv().len()],
        }
    }

    /// Scales load and PV by uniform multipliers (power factors preserved).
    pub fn scaled(feeder: &FeederModel, load_mult: f64, pv_mult: f64) -> Self {
        let mut op = OperatingPoint::nominal(feeder);
        for (kw, kvar) in op.load_kw.iter_mut().zip(op.load_kvar.iter_mut()) {
            *kw *= load_mult;
            *kvar *= load_mult;
        }
        for (kw, pv) in op.pv_kw.iter_mut().zip(feeder.pv()) {
            *kw = pv.rated_kw * pv_mult;
        }
        op
    }

    /// Net injections with every reactive setpoint clamped to its inverter's
    /// capability at the current active output.
    pub fn injections(&self, feeder: &FeederModel) -> InjectionSet {
        let mut inj = InjectionSet::zero(feeder);
        for (i, _) in feeder.loads().iter().enumerate() {
            inj.add(feeder.load_node(i), self.load_kw[i], self.load_kvar[i])
                .expect("validated load node");
        }
        for (i, pv) in feeder.pv().iter().enumerate() {
            let cap = pv.reactive_capability(self.pv_kw[i]);
            let q = self.pv_kvar[i].clamp(-cap, cap);
            inj.add(feeder.pv_node(i), -self.pv_kw[i], -q)
                .expect("validated pv node");
        }
        inj
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tolerance: DEFAULT_TOLERANCE,
            max_iterations: DEFAULT_MAX_ITERATIONS,
        }
    }
}

/// Solved per-phase voltages, per unit.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalVoltageState {
    v: Vec<[Complex64; 3]>,
    phases: Vec<PhaseSet>,
    pub iterations: usize,
    pub converged: bool,
    pub max_mismatch: f64,
}

impl NodalVoltageState {
    pub fn voltage(&self, node: Node) -> Complex64 {
        debug_assert!(self.phases[node.bus].contains(node.phase));
        self.v[node.bus][node.phase.index()]
    }

    pub fn magnitude(&self, node: Node) -> f64 {
        self.voltage(node).norm()
    }

    pub fn angle_deg(&self, node: Node) -> f64 {
        self.voltage(node).arg().to_degrees()
    }

    pub fn nodes(&self) -> impl Iterator<Item = Node> + '_ {
        self.phases
            .iter()
            .enumerate()
            .flat_map(|(b, ps)| ps.iter().map(move |p| Node::new(b, p)))
    }

    /// Largest and smallest magnitude over all nodes.
    pub fn extremes(&self) -> (f64, f64) {
        self.nodes()
            .map(|n| self.magnitude(n))
            .fold((f64::NEG_INFINITY, f64::INFINITY), |(hi, lo), v| (hi.max(v), lo.min(v)))
    }
}

/// Regulator ratio per phase on every segment for the given taps.
fn segment_ratios(feeder: &FeederModel, taps: &[i32]) -> Vec<[f64; 3]> {
    let mut ratios = vec![[1.0; 3]; feeder.lines().len()];
    for (r, reg) in feeder.regulators().iter().enumerate() {
        let seg = feeder.regulator_segment(r);
        ratios[seg][reg.phase.index()] = tap_ratio(taps[r], reg.step_pu);
    }
    ratios
}

pub fn solve(feeder: &FeederModel, injections: &InjectionSet, taps: &[i32]) -> Result<NodalVoltageState> {
    solve_with(feeder, injections, taps, SolverOptions::default())
}

pub fn solve_with(
    feeder: &FeederModel,
    injections: &InjectionSet,
    taps: &[i32],
    options: SolverOptions,
) -> Result<NodalVoltageState> {
    if taps.len() != feeder.regulators().len() {
        return Err(Error::Config(format!(
            "expected {} tap positions, got {}",
            feeder.regulators().len(),
            taps.len()
        )));
    }
    if let Some((i, t)) = taps.iter().enumerate().find(|(_, t)| t.abs() > TAP_LIMIT) {
        return Err(Error::Config(format!(
            "tap {t} of regulator `{}` outside [-{TAP_LIMIT}, {TAP_LIMIT}]",
            feeder.regulators()[i].id
        )));
    }

    let n = feeder.bus_count();
    let order = feeder.order();
    let ratios = segment_ratios(feeder, taps);
    let base: Vec<f64> = feeder.buses().iter().map(|b| b.base_kv * 1000.0).collect();
    let phases: Vec<PhaseSet> = feeder.buses().iter().map(|b| b.phases).collect();

    let src = feeder.source_index();
    let vs = feeder.source().voltage_pu * base[src];
    let mut v = vec![[ZERO; 3]; n];
    for p in phases[src].iter() {
        v[src][p.index()] = Complex64::from_polar(vs, p.nominal_angle());
    }
    for &b in &order[1..] {
        let f = feeder.feed(b).expect("non-source bus has a feed");
        for p in phases[b].iter() {
            v[b][p.index()] = v[f.parent][p.index()] * ratios[f.segment][p.index()];
        }
    }

    let mut line_current = vec![[ZERO; 3]; n];
    let mut acc = vec![[ZERO; 3]; n];
    let mut mismatch = f64::INFINITY;
    for iter in 1..=options.max_iterations {
        // Backward sweep: accumulate branch currents leaf to root.
        for a in acc.iter_mut() {
            *a = [ZERO; 3];
        }
        for &b in order.iter().rev() {
            for p in phases[b].iter() {
                let i = p.index();
                let s = injections.complex_va(b, p);
                if s != ZERO {
                    acc[b][i] += (s / v[b][i]).conj();
                }
            }
            if let Some(f) = feeder.feed(b) {
                for p in phases[b].iter() {
                    let i = p.index();
                    let current = acc[b][i] * ratios[f.segment][i];
                    line_current[b][i] = current;
                    acc[f.parent][i] += current;
                }
            }
        }

        // Forward sweep: voltages root to leaf.
        mismatch = 0.0;
        for &b in &order[1..] {
            let f = feeder.feed(b).expect("non-source bus has a feed");
            let z = feeder.segment_impedance(f.segment);
            for p in phases[b].iter() {
                let i = p.index();
                let mut drop = ZERO;
                for q in phases[b].iter() {
                    drop += z[i][q.index()] * line_current[b][q.index()];
                }
                let new = (v[f.parent][i] - drop) * ratios[f.segment][i];
                if !(new.re.is_finite() && new.im.is_finite()) {
                    return Err(Error::Overflow(format!(
                        "voltage at bus `{}` phase {p} is not finite at iteration {iter}",
                        feeder.bus(b).id
                    )));
                }
                mismatch = mismatch.max((new - v[b][i]).norm() / base[b]);
                v[b][i] = new;
            }
        }

        if mismatch < options.tolerance {
            let v_pu = v.iter().zip(&base).map(|(row, &vb)| row.map(|x| x / vb)).collect();
            return Ok(NodalVoltageState {
                v: v_pu,
                phases,
                iterations: iter,
                converged: true,
                max_mismatch: mismatch,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: options.max_iterations,
        worst_mismatch: mismatch,
    })
}

/// Number of (bus, phase) magnitudes outside `[v_lo, v_hi]`.
pub fn count_violations(state: &NodalVoltageState, v_lo: f64, v_hi: f64) -> usize {
    state
        .nodes()
        .filter(|&n| {
            let m = state.magnitude(n);
            m < v_lo || m > v_hi
        })
        .count()
}

/// Per-unit voltage on a regulator's secondary (its regulated quantity).
pub fn regulator_secondary(feeder: &FeederModel, state: &NodalVoltageState, reg: usize) -> f64 {
    let node = Node::new(feeder.regulator_secondary_bus(reg), feeder.regulators()[reg].phase);
    state.magnitude(node)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feeder::parse_feeder;

    /// 1 kV line-to-neutral base with a 1 MVA per-phase base gives 1 ohm = 1 pu.
    fn two_bus(z: [f64; 2]) -> FeederModel {
        let text = format!(
            r#"{{
              "buses": [
                {{"id": "1", "phases": "a", "base_kv": 1.0}},
                {{"id": "2", "phases": "a", "base_kv": 1.0}}
              ],
              "lines": [{{"id": "12", "from": "1", "to": "2", "length_km": 1.0, "z": [[[{}, {}]]]}}],
              "source": {{"bus": "1", "nominal_kv": 1.732}}
            }}"#,
            z[0], z[1]
        );
        parse_feeder(&text).unwrap()
    }

    #[test]
    fn zero_injection_gives_flat_profile() {
        let f = two_bus([0.01, 0.02]);
        let state = solve(&f, &InjectionSet::zero(&f), &[]).unwrap();
        for n in state.nodes() {
            assert_eq!(state.magnitude(n), 1.0);
        }
        assert_eq!(count_violations(&state, 0.96, 1.049), 0);
    }

    #[test]
    fn closed_form_two_bus() {
        // |V2|^4 + (2(RP + XQ) - |V1|^2)|V2|^2 + |Z|^2|S|^2 = 0, larger root;
        // then conj(V2) = (|V2|^2 + Z conj(S)) / V1.
        let (r, x, p, q): (f64, f64, f64, f64) = (0.01, 0.02, 0.1, 0.05);
        let b = 2.0 * (r * p + x * q) - 1.0;
        let c = (r * r + x * x) * (p * p + q * q);
        let m2 = (-b + (b * b - 4.0 * c).sqrt()) / 2.0;
        let z = Complex64::new(r, x);
        let s = Complex64::new(p, q);
        let expected = (Complex64::new(m2, 0.0) + z * s.conj()).conj();

        let f = two_bus([r, x]);
        let mut inj = InjectionSet::zero(&f);
        inj.add(Node::new(1, Phase::A), p * 1000.0, q * 1000.0).unwrap();
        let state = solve(&f, &inj, &[]).unwrap();
        let got = state.voltage(Node::new(1, Phase::A));
        assert!((got - expected).norm() < 1e-6, "got {got}, expected {expected}");
    }

    #[test]
    fn injection_outside_feeder_is_rejected() {
        let f = two_bus([0.01, 0.02]);
        let mut inj = InjectionSet::zero(&f);
        assert!(inj.add(Node::new(1, Phase::B), 1.0, 0.0).is_err());
    }

    #[test]
    fn non_convergence_is_reported() {
        let f = two_bus([0.5, 1.0]);
        let mut inj = InjectionSet::zero(&f);
        inj.add(Node::new(1, Phase::A), 5000.0, 5000.0).unwrap();
        match solve(&f, &inj, &[]) {
            Err(Error::NonConvergence { iterations, .. }) => assert_eq!(iterations, 100),
            Err(Error::Overflow(_)) => {}
            other => panic!("expected failure, got {other:?}"),
        }
    }

    #[test]
    fn violation_count_matches_scan() {
        let f = two_bus([0.01, 0.02]);
        let mut inj = InjectionSet::zero(&f);
        inj.add(Node::new(1, Phase::A), -3000.0, 0.0).unwrap();
        let state = solve(&f, &inj, &[]).unwrap();
        let v2 = state.magnitude(Node::new(1, Phase::A));
        assert!(v2 > 1.02);
        assert_eq!(count_violations(&state, 0.96, 1.02), 1);
        assert_eq!(count_violations(&state, 0.96, 1.2), 0);
    }
}
