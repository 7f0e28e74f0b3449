//! Browser bindings: a voltage profile along the bundled PV feeder, the
//! zone count over a sweep of the clustering threshold, and the tap trace of
//! one regulator after a supply step. Results cross into JavaScript as JSON.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use voltzone::feeder::tap_ratio;
use voltzone::fixtures::{feeder13, pv_feeder};
use voltzone::powerflow::{solve, OperatingPoint};
use voltzone::scenario::ScenarioSource;
use voltzone::sensitivity::{sensitivity_study, CorrelationMatrix, SensitivityStudy};
use voltzone::vr::{automaton_tick, settle_taps, VrAutomatonState, BASE_VOLTS};
use voltzone::zoning::fic_cluster;
use voltzone::{FeederModel, Phase};

#[derive(Debug, Serialize)]
pub struct ProfilePoint {
    pub node: String,
    pub phase: Phase,
    pub km: f64,
    pub v: f64,
}

#[derive(Debug, Serialize)]
pub struct VoltageProfile {
    pub points: Vec<ProfilePoint>,
    pub taps: Vec<(String, i32)>,
    pub iterations: usize,
}

#[derive(Debug, Serialize)]
pub struct SweepPoint {
    pub alpha: f64,
    pub zones: usize,
    pub by_phase: Vec<(Phase, usize)>,
}

#[derive(Debug, Serialize)]
pub struct TraceStep {
    pub t: u32,
    pub v_in: f64,
    pub volts: f64,
    pub tap: i32,
}

fn js(e: voltzone::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("plain data serializes")
}

/// One feeder plus its cached correlation matrix.
#[wasm_bindgen]
pub struct Demo {
    feeder: FeederModel,
    correlation: Option<(usize, CorrelationMatrix)>,
}

#[wasm_bindgen]
impl Demo {
    /// `"pv"` for the high-PV feeder, anything else for the 13-bus one.
    #[wasm_bindgen(constructor)]
    pub fn new(which: &str) -> Demo {
        let feeder = if which == "pv" { pv_feeder() } else { feeder13() };
        Demo {
            feeder,
            correlation: None,
        }
    }

    pub fn summary(&self) -> String {
        self.feeder.to_string()
    }

    /// Voltage magnitude at every phase node against distance from the
    /// source, JSON.
    #[wasm_bindgen(js_name = voltageProfile)]
    pub fn voltage_profile_js(&self, load_mult: f64, pv_mult: f64, settle: bool) -> Result<String, JsError> {
        self.voltage_profile(load_mult, pv_mult, settle)
            .map(|p| to_json(&p))
            .map_err(js)
    }

    /// Inverter zone count for each threshold, JSON.
    #[wasm_bindgen(js_name = alphaSweep)]
    pub fn alpha_sweep_js(&mut self, scenarios: usize, alphas: Vec<f64>) -> Result<String, JsError> {
        self.alpha_sweep(scenarios, &alphas).map(|s| to_json(&s)).map_err(js)
    }
}

impl Demo {
    pub fn voltage_profile(&self, load_mult: f64, pv_mult: f64, settle: bool) -> voltzone::Result<VoltageProfile> {
        let f = &self.feeder;
        if !(load_mult >= 0.0 && pv_mult >= 0.0) {
            return Err(voltzone::Error::Config("multipliers must be non-negative".into()));
        }
        let inj = OperatingPoint::scaled(f, load_mult, pv_mult).injections(f);
        let (taps, state) = if settle {
            settle_taps(f, &inj, &f.initial_taps())?
        } else {
            (f.initial_taps(), solve(f, &inj, &f.initial_taps())?)
        };
        let points = state
            .nodes()
            .map(|n| ProfilePoint {
                node: f.node_label(n),
                phase: n.phase,
                km: f.distance_km(n.bus),
                v: state.magnitude(n),
            })
            .collect();
        Ok(VoltageProfile {
            points,
            taps: f.regulators().iter().map(|r| r.id.clone()).zip(taps).collect(),
            iterations: state.iterations,
        })
    }

    pub fn alpha_sweep(&mut self, scenarios: usize, alphas: &[f64]) -> voltzone::Result<Vec<SweepPoint>> {
        if self.correlation.as_ref().map(|c| c.0) != Some(scenarios) {
            let study = SensitivityStudy {
                scenarios,
                ..Default::default()
            };
            let bundle = sensitivity_study(&self.feeder, &ScenarioSource::default(), &study)?;
            self.correlation = Some((scenarios, bundle.correlation));
        }
        let corr = &self.correlation.as_ref().expect("just filled").1;
        alphas
            .iter()
            .map(|&alpha| {
                let zones = fic_cluster(corr, alpha)?;
                let by_phase: Vec<(Phase, usize)> = zones.iter().map(|(&p, z)| (p, z.len())).collect();
                Ok(SweepPoint {
                    alpha,
                    zones: by_phase.iter().map(|x| x.1).sum(),
                    by_phase,
                })
            })
            .collect()
    }
}

/// A supply step seen by one tap changer: the primary sits at `v_before` pu
/// and jumps to `v_after` at `step_at` seconds.
#[derive(Debug, Clone, Copy)]
pub struct StepTest {
    pub v_before: f64,
    pub v_after: f64,
    pub step_at: u32,
    /// Volts on the 120 V base.
    pub v_set: f64,
    pub deadband: f64,
    pub delay: f64,
    pub tick: u32,
    pub horizon: u32,
}

/// Tap-changer response to `test`. The secondary is the primary times the
/// tap ratio, sampled every tick.
pub fn tap_trace(test: &StepTest) -> voltzone::Result<Vec<TraceStep>> {
    if test.tick == 0 {
        return Err(voltzone::Error::Config("tick must be at least 1 s".into()));
    }
    let reg = &feeder13().regulators()[0].clone();
    let mut st = VrAutomatonState::new(0, reg);
    st.tap = 0;
    st.v_set = test.v_set;
    st.deadband = test.deadband;
    st.time_delay = test.delay;
    let mut out = Vec::new();
    let mut t = 0;
    while t <= test.horizon {
        let v_in = if t < test.step_at { test.v_before } else { test.v_after };
        let v_out = v_in * tap_ratio(st.tap, reg.step_pu);
        out.push(TraceStep {
            t,
            v_in,
            volts: v_out * BASE_VOLTS,
            tap: st.tap,
        });
        automaton_tick(&mut st, v_out, test.tick as f64)?;
        t += test.tick;
    }
    Ok(out)
}

#[wasm_bindgen(js_name = tapTrace)]
#[allow(clippy::too_many_arguments)]
pub fn tap_trace_js(
    v_before: f64,
    v_after: f64,
    step_at: u32,
    v_set: f64,
    deadband: f64,
    delay: f64,
    tick: u32,
    horizon: u32,
) -> Result<String, JsError> {
    let test = StepTest {
        v_before,
        v_after,
        step_at,
        v_set,
        deadband,
        delay,
        tick,
        horizon,
    };
    tap_trace(&test).map(|s| to_json(&s)).map_err(js)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_starts_at_the_source() {
        let d = Demo::new("pv");
        let p = d.voltage_profile(0.5, 0.0, false).unwrap();
        assert_eq!(p.points.len(), d.feeder.nodes().len());
        assert!(p
            .points
            .iter()
            .filter(|x| x.km == 0.0)
            .all(|x| (x.v - 1.0).abs() < 1e-9));
        assert!(d.voltage_profile(-1.0, 0.0, false).is_err());
    }

    #[test]
    fn sweep_counts_grow_with_alpha() {
        let mut d = Demo::new("13");
        let s = d.alpha_sweep(20, &[0.5, 0.9, 1.0]).unwrap();
        assert!(s.windows(2).all(|w| w[0].zones <= w[1].zones));
        let json = d.alpha_sweep_js(20, vec![0.9]).ok().unwrap();
        assert!(json.contains("\"zones\""));
    }

    #[test]
    fn step_is_corrected_after_the_delay() {
        // 0.96 pu (115.2 V) against a 120 V +/- 1 V band: each tap adds 0.75 V
        // of primary, so six taps bring it back, one per 30 s delay.
        let tr = tap_trace(&StepTest {
            v_before: 1.0,
            v_after: 0.96,
            step_at: 60,
            v_set: 120.0,
            deadband: 2.0,
            delay: 30.0,
            tick: 15,
            horizon: 600,
        })
        .unwrap();
        let changes: Vec<&TraceStep> = tr.windows(2).filter(|w| w[0].tap != w[1].tap).map(|w| &w[1]).collect();
        assert_eq!(changes[0].t, 90);
        assert!(changes.windows(2).all(|w| w[1].t - w[0].t == 30));
        let last = tr.last().unwrap();
        assert!((119.0..=121.0).contains(&last.volts), "{}", last.volts);
    }
}
