//! Quasi-static time-series engine.
//!
//! The engine advances in ticks of `tick_seconds`. Profiles change on the
//! minute (zero-order hold); regulator automata tick every engine tick on the
//! voltage that held since the previous tick; the inverter stage runs every
//! `t` minutes and the setpoint tuner every `T` minutes. The network is
//! re-solved after every actuation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feeder::{FeederModel, Node};
use crate::ibr::{DispatchLedger, IbrControllerConfig, ZoneController};
use crate::phase::Phase;
use crate::powerflow::{count_violations, regulator_secondary, solve, NodalVoltageState, OperatingPoint};
use crate::profiles::ProfileLibrary;
use crate::sensitivity::{CorrelationMatrix, VlsmQ};
use crate::vr::{automaton_tick, first_stage_limits, settle_with, tune_setpoint, VrAutomatonState, VrTunerConfig};
use crate::zoning::ZonePartition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlMode {
    /// Regulators under their own deadband/time-delay control only.
    Local,
    /// Inverter stage plus setpoint tuning on top of the local automata.
    Coordinated,
}

/// Per-device overrides of the feeder's regulator settings.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSettings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_set: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deadband: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_delay: Option<f64>,
}

/// Inverter-stage settings; the voltage limits come from the tuner limits and
/// the stage margin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InverterSettings {
    pub eps_u: f64,
    pub eps_d: f64,
    pub alpha: f64,
    pub cadence_min: u32,
}

impl Default for InverterSettings {
    fn default() -> Self {
        let d = IbrControllerConfig::default();
        InverterSettings {
            eps_u: d.eps_u,
            eps_d: d.eps_d,
            alpha: d.alpha,
            cadence_min: d.cadence_min,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub mode: ControlMode,
    pub tick_seconds: u32,
    /// First profile row simulated.
    pub start_minute: usize,
    /// Horizon in minutes.
    pub minutes: usize,
    pub seed: u64,
    pub inverter: InverterSettings,
    pub tuner: VrTunerConfig,
    /// Counting band for violations, pu.
    pub metric_limits: (f64, f64),
    /// Keyed by regulator id.
    pub devices: BTreeMap<String, DeviceSettings>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            mode: ControlMode::Coordinated,
            tick_seconds: 15,
            start_minute: 0,
            minutes: 1440,
            seed: 1,
            inverter: InverterSettings::default(),
            tuner: VrTunerConfig::default(),
            metric_limits: (0.95, 1.05),
            devices: BTreeMap::new(),
        }
    }
}

impl SimulationConfig {
    pub fn ibr_config(&self) -> Result<IbrControllerConfig> {
        let (v1_max, v1_min) = first_stage_limits(&self.tuner)?;
        let cfg = IbrControllerConfig {
            v1_max,
            v1_min,
            eps_u: self.inverter.eps_u,
            eps_d: self.inverter.eps_d,
            alpha: self.inverter.alpha,
            cadence_min: self.inverter.cadence_min,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn automata(&self, feeder: &FeederModel) -> Result<Vec<VrAutomatonState>> {
        for id in self.devices.keys() {
            if feeder.regulator_index(id).is_none() {
                return Err(Error::DanglingReference {
                    kind: "regulator",
                    id: id.clone(),
                });
            }
        }
        let mut out = Vec::with_capacity(feeder.regulators().len());
        for (i, reg) in feeder.regulators().iter().enumerate() {
            let mut a = VrAutomatonState::new(i, reg);
            if let Some(d) = self.devices.get(&reg.id) {
                a.v_set = d.v_set.unwrap_or(a.v_set);
                a.deadband = d.deadband.unwrap_or(a.deadband);
                a.time_delay = d.time_delay.unwrap_or(a.time_delay);
            }
            if !(a.deadband > 0.0 && a.time_delay > 0.0) {
                return Err(Error::Config(format!(
                    "regulator `{}` needs deadband and delay > 0",
                    reg.id
                )));
            }
            let tick = self.tick_seconds as f64;
            if (a.time_delay / tick).fract() != 0.0 {
                return Err(Error::Config(format!(
                    "delay {} s of regulator `{}` is not a multiple of the {} s tick",
                    a.time_delay, reg.id, self.tick_seconds
                )));
            }
            out.push(a);
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tick_seconds == 0 || 60 % self.tick_seconds != 0 {
            return Err(Error::Config(format!(
                "tick of {} s must divide one minute",
                self.tick_seconds
            )));
        }
        if self.minutes == 0 {
            return Err(Error::Config("horizon must be at least one minute".into()));
        }
        if !(self.metric_limits.0 < self.metric_limits.1) {
            return Err(Error::Config("metric limits are inverted".into()));
        }
        self.tuner.validate()?;
        if self.mode == ControlMode::Coordinated {
            let ibr = self.ibr_config()?;
            if ibr.cadence_min >= self.tuner.cadence_min {
                return Err(Error::Config(format!(
                    "inverter cadence ({} min) must be shorter than tuner cadence ({} min)",
                    ibr.cadence_min, self.tuner.cadence_min
                )));
            }
        }
        Ok(())
    }
}

/// Offline artifacts the coordinated mode needs.
#[derive(Debug, Clone, Copy)]
pub struct ControlInputs<'a> {
    /// Partition with critical nodes attached.
    pub partition: &'a ZonePartition,
    pub vlsm: &'a VlsmQ,
    pub correlation: &'a CorrelationMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IbrLogEntry {
    pub seq: u64,
    pub time_s: u64,
    pub zone: String,
    pub inverter: String,
    pub node: String,
    pub kvar_delta: f64,
    pub setpoint_kvar: f64,
    pub mode: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VrAction {
    Tap,
    Setpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VrLogEntry {
    pub seq: u64,
    pub time_s: u64,
    pub device: String,
    pub phase: Phase,
    pub action: VrAction,
    pub tap: i32,
    pub v_set: f64,
}

/// One row per simulated minute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub minute: usize,
    pub v_min: f64,
    pub v_max: f64,
    pub violations: usize,
    pub q_total_kvar: f64,
    pub taps: Vec<i32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mode: ControlMode,
    pub margin: f64,
    pub minutes: usize,
    /// Node-minutes outside the counting band.
    pub n_v: u64,
    /// Tap operations over all units.
    pub n_vr: u64,
    /// Reactive energy from the inverters, kvarh (absorption negative).
    pub q_ibr_kvarh: f64,
    pub taps_by_device: BTreeMap<String, u64>,
    pub q_by_zone_kvarh: BTreeMap<String, f64>,
    pub violations_by_phase: BTreeMap<Phase, u64>,
    pub v_max: f64,
    pub v_min: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOutput {
    pub metrics: MetricsReport,
    pub ibr_log: Vec<IbrLogEntry>,
    pub vr_log: Vec<VrLogEntry>,
    pub trace: Vec<TraceRow>,
}

/// Reactive energy per inverter, kvarh, integrating the piecewise-constant
/// setpoints in `log` from `start_s` to `end_s`.
pub fn integrate_setpoints(feeder: &FeederModel, log: &[IbrLogEntry], start_s: u64, end_s: u64) -> Vec<f64> {
    let index: BTreeMap<&str, usize> = feeder
        .pv()
        .iter()
        .enumerate()
        .map(|(i, p)| (p.id.as_str(), i))
        .collect();
    let n = feeder.pv().len();
    let mut energy = vec![0.0; n];
    let mut last = vec![(start_s, 0.0); n];
    for e in log {
        let Some(&i) = index.get(e.inverter.as_str()) else {
            continue;
        };
        let (t0, q) = last[i];
        energy[i] += q * (e.time_s - t0) as f64 / 3600.0;
        last[i] = (e.time_s, e.setpoint_kvar);
    }
    for (i, (t0, q)) in last.into_iter().enumerate() {
        energy[i] += q * (end_s - t0) as f64 / 3600.0;
    }
    energy
}

struct Engine<'a> {
    feeder: &'a FeederModel,
    automata: Vec<VrAutomatonState>,
    /// Regulators upstream first.
    device_order: Vec<usize>,
    ledger: DispatchLedger,
    op: OperatingPoint,
    state: NodalVoltageState,
    seq: u64,
    ibr_log: Vec<IbrLogEntry>,
    vr_log: Vec<VrLogEntry>,
}

impl Engine<'_> {
    fn taps(&self) -> Vec<i32> {
        self.automata.iter().map(|a| a.tap).collect()
    }

    fn resolve(&mut self, time_s: u64) -> Result<()> {
        self.op.pv_kvar.clone_from(&self.ledger.setpoints);
        let inj = self.op.injections(self.feeder);
        self.state = solve(self.feeder, &inj, &self.taps()).map_err(|e| Error::Aborted {
            time_s,
            state: format!("taps {:?}", self.taps()),
            source: Box::new(e),
        })?;
        Ok(())
    }

    fn next_seq(&mut self) -> u64 {
        self.seq += 1;
        self.seq
    }

    fn log_vr(&mut self, time_s: u64, device: usize, action: VrAction) {
        let seq = self.next_seq();
        let reg = &self.feeder.regulators()[device];
        self.vr_log.push(VrLogEntry {
            seq,
            time_s,
            device: reg.id.clone(),
            phase: reg.phase,
            action,
            tap: self.automata[device].tap,
            v_set: self.automata[device].v_set,
        });
    }

    fn log_ibr(&mut self, time_s: u64, zone: &str, pv: usize, delta: f64, mode: &str) {
        let seq = self.next_seq();
        let node = self.feeder.node_label(self.feeder.pv_node(pv));
        self.ibr_log.push(IbrLogEntry {
            seq,
            time_s,
            zone: zone.to_string(),
            inverter: self.feeder.pv()[pv].id.clone(),
            node,
            kvar_delta: delta,
            setpoint_kvar: self.ledger.setpoints[pv],
            mode: mode.to_string(),
        });
    }

    fn capability(&self) -> Vec<f64> {
        self.feeder
            .pv()
            .iter()
            .zip(&self.op.pv_kw)
            .map(|(p, &kw)| p.reactive_capability(kw))
            .collect()
    }

    fn magnitude(&self, n: Node) -> f64 {
        self.state.magnitude(n)
    }
}

pub fn run(
    feeder: &FeederModel,
    profiles: &ProfileLibrary,
    inputs: Option<ControlInputs<'_>>,
    cfg: &SimulationConfig,
) -> Result<SimulationOutput> {
    cfg.validate()?;
    profiles.check_feeder(feeder)?;
    if cfg.start_minute + cfg.minutes > profiles.minutes() {
        return Err(Error::Config(format!(
            "horizon ends at minute {} but profiles have {} rows",
            cfg.start_minute + cfg.minutes,
            profiles.minutes()
        )));
    }
    let coordinated = cfg.mode == ControlMode::Coordinated;
    let ibr_cfg = if coordinated { Some(cfg.ibr_config()?) } else { None };

    // Inverter zone controllers, in partition order.
    let mut controllers: Vec<(String, ZoneController)> = Vec::new();
    let mut zone_inverters: Vec<(String, Vec<usize>)> = Vec::new();
    if coordinated {
        let inputs =
            inputs.ok_or_else(|| Error::Config("coordinated mode needs partition and sensitivities".into()))?;
        for zone in inputs.partition.ibr_zones() {
            let slot = controllers.len();
            let ctl = ZoneController::new(feeder, slot, zone, inputs.vlsm, inputs.correlation)?;
            let inv = ctl.lists.first().map(|l| l.inverters.clone()).unwrap_or_default();
            zone_inverters.push((zone.label(), inv));
            controllers.push((zone.label(), ctl));
        }
    }
    let vr_zones: Vec<(usize, Vec<Node>)> = match (coordinated, inputs) {
        (true, Some(i)) => i.partition.vr.iter().map(|z| (z.device, z.critical.clone())).collect(),
        _ => Vec::new(),
    };

    let mut device_order: Vec<usize> = (0..feeder.regulators().len()).collect();
    let depth: Vec<usize> = {
        let mut d = vec![0; feeder.bus_count()];
        for (k, &b) in feeder.order().iter().enumerate() {
            d[b] = k;
        }
        d
    };
    device_order.sort_by_key(|&r| (depth[feeder.regulator_secondary_bus(r)], r));

    let automata = cfg.automata(feeder)?;
    let op = profiles.operating_point(feeder, cfg.start_minute);
    let initial_taps: Vec<i32> = automata.iter().map(|a| a.tap).collect();
    let (taps, state) = settle_with(feeder, &op.injections(feeder), &initial_taps, &automata)?;
    let mut eng = Engine {
        feeder,
        automata,
        device_order,
        ledger: DispatchLedger::new(feeder.pv().len(), controllers.len()),
        op,
        state,
        seq: 0,
        ibr_log: Vec::new(),
        vr_log: Vec::new(),
    };
    for (a, t) in eng.automata.iter_mut().zip(taps) {
        a.tap = t;
    }

    let tick = cfg.tick_seconds as u64;
    let ticks_per_minute = 60 / tick;
    let total_ticks = cfg.minutes as u64 * ticks_per_minute;
    let mut n_v = 0u64;
    let mut violations_by_phase: BTreeMap<Phase, u64> = BTreeMap::new();
    let mut taps_by_device: BTreeMap<String, u64> = feeder.regulators().iter().map(|r| (r.id.clone(), 0)).collect();
    let mut trace = Vec::with_capacity(cfg.minutes);
    let (mut v_hi, mut v_lo) = (f64::NEG_INFINITY, f64::INFINITY);
    let nodes = feeder.nodes();

    for step in 0..total_ticks {
        let time_s = step * tick;

        if step > 0 {
            let mut tapped = false;
            for k in 0..eng.device_order.len() {
                let r = eng.device_order[k];
                let v2 = regulator_secondary(feeder, &eng.state, r);
                if automaton_tick(&mut eng.automata[r], v2, tick as f64)?.is_some() {
                    tapped = true;
                    *taps_by_device.get_mut(&feeder.regulators()[r].id).expect("device") += 1;
                    eng.log_vr(time_s, r, VrAction::Tap);
                }
            }
            if tapped {
                eng.resolve(time_s)?;
            }
        }

        if step % ticks_per_minute != 0 {
            continue;
        }
        let rel_minute = (step / ticks_per_minute) as usize;
        let minute = cfg.start_minute + rel_minute;

        eng.op = profiles.operating_point(feeder, minute);
        let cap = eng.capability();
        for (pv, delta) in eng.ledger.clamp_to(&cap) {
            let zone = zone_inverters
                .iter()
                .find(|(_, inv)| inv.contains(&pv))
                .map_or_else(String::new, |(z, _)| z.clone());
            eng.log_ibr(time_s, &zone, pv, delta, "clamp");
        }
        eng.resolve(time_s)?;

        if let Some(ibr_cfg) = &ibr_cfg {
            if rel_minute.is_multiple_of(ibr_cfg.cadence_min as usize) {
                let mut acted = false;
                for (label, ctl) in controllers.iter_mut() {
                    let readings: Vec<Option<f64>> = ctl.critical.iter().map(|&n| Some(eng.magnitude(n))).collect();
                    let out = ctl.step(&readings, &mut eng.ledger, &cap, ibr_cfg)?;
                    for a in &out.allocations {
                        eng.log_ibr(time_s, label, a.pv, a.delta_kvar, out.mode.as_str());
                        acted = true;
                    }
                }
                if acted {
                    eng.resolve(time_s)?;
                }
            }
            if rel_minute.is_multiple_of(cfg.tuner.cadence_min as usize) {
                for k in 0..eng.device_order.len() {
                    let r = eng.device_order[k];
                    let Some((_, critical)) = vr_zones.iter().find(|(d, c)| *d == r && !c.is_empty()) else {
                        continue;
                    };
                    let readings: Vec<f64> = critical.iter().map(|&n| eng.magnitude(n)).collect();
                    let v2 = regulator_secondary(feeder, &eng.state, r);
                    let a = &mut eng.automata[r];
                    let v_set = tune_setpoint(&readings, v2, &cfg.tuner);
                    let changed = v_set != a.v_set || a.deadband != cfg.tuner.deadband;
                    a.v_set = v_set;
                    a.deadband = cfg.tuner.deadband;
                    if changed {
                        eng.log_vr(time_s, r, VrAction::Setpoint);
                    }
                }
            }
        }

        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut count = 0usize;
        for &n in &nodes {
            let m = eng.magnitude(n);
            lo = lo.min(m);
            hi = hi.max(m);
            if m < cfg.metric_limits.0 || m > cfg.metric_limits.1 {
                count += 1;
                *violations_by_phase.entry(n.phase).or_insert(0) += 1;
            }
        }
        debug_assert_eq!(
            count,
            count_violations(&eng.state, cfg.metric_limits.0, cfg.metric_limits.1)
        );
        n_v += count as u64;
        v_hi = v_hi.max(hi);
        v_lo = v_lo.min(lo);
        trace.push(TraceRow {
            minute,
            v_min: lo,
            v_max: hi,
            violations: count,
            q_total_kvar: eng.ledger.setpoints.iter().sum(),
            taps: eng.taps(),
        });
    }

    let end_s = total_ticks * tick;
    let per_pv = integrate_setpoints(feeder, &eng.ibr_log, 0, end_s);
    // `+ 0.0` turns the -0.0 of an empty float sum into 0.
    let q_ibr_kvarh = per_pv.iter().sum::<f64>() + 0.0;
    let q_by_zone_kvarh = zone_inverters
        .iter()
        .map(|(label, inv)| (label.clone(), inv.iter().map(|&pv| per_pv[pv]).sum::<f64>() + 0.0))
        .collect();
    let metrics = MetricsReport {
        mode: cfg.mode,
        margin: cfg.tuner.margin,
        minutes: cfg.minutes,
        n_v,
        n_vr: taps_by_device.values().sum(),
        q_ibr_kvarh,
        taps_by_device,
        q_by_zone_kvarh,
        violations_by_phase,
        v_max: v_hi,
        v_min: v_lo,
    };
    Ok(SimulationOutput {
        metrics,
        ibr_log: eng.ibr_log,
        vr_log: eng.vr_log,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::feeder13;

    fn flat(minutes: usize) -> ProfileLibrary {
        let mut lib = ProfileLibrary::new();
        lib.insert("flat", vec![1.0; minutes]).unwrap();
        lib
    }

    #[test]
    fn flat_day_is_quiet() {
        let f = feeder13();
        let cfg = SimulationConfig {
            mode: ControlMode::Local,
            minutes: 120,
            ..Default::default()
        };
        let out = run(&f, &flat(120), None, &cfg).unwrap();
        assert_eq!(out.metrics.n_vr, 0);
        assert_eq!(out.metrics.n_v, 0);
        assert_eq!(out.trace.len(), 120);
        assert!(out.ibr_log.is_empty() && out.vr_log.is_empty());
        assert!(out.trace.windows(2).all(|w| w[0].taps == w[1].taps));
    }

    #[test]
    fn setpoint_energy() {
        let f = feeder13();
        let entry = |time_s, inverter: &str, sp| IbrLogEntry {
            seq: 0,
            time_s,
            zone: "a1".into(),
            inverter: inverter.into(),
            node: String::new(),
            kvar_delta: 0.0,
            setpoint_kvar: sp,
            mode: "correcting-over".into(),
        };
        // -10 kvar for 30 min then -4 kvar for 30 min: -7 kvarh.
        let log = [
            entry(1800, "pv-8", -10.0),
            entry(3600, "pv-8", -4.0),
            entry(0, "nope", 5.0),
        ];
        let e = integrate_setpoints(&f, &log, 0, 5400);
        assert!((e[0] + 7.0).abs() < 1e-12);
        assert!(e[1..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn config_checks() {
        let ok = SimulationConfig::default();
        ok.validate().unwrap();
        let bad_tick = SimulationConfig {
            tick_seconds: 7,
            ..Default::default()
        };
        assert!(bad_tick.validate().is_err());
        let mut slow = SimulationConfig::default();
        slow.inverter.cadence_min = 2;
        assert!(slow.validate().is_err());
        slow.mode = ControlMode::Local;
        slow.validate().unwrap();

        let f = feeder13();
        let mut odd = SimulationConfig::default();
        odd.devices.insert(
            "oltc-a".into(),
            DeviceSettings {
                time_delay: Some(40.0),
                ..Default::default()
            },
        );
        assert!(odd.automata(&f).is_err());
        odd.devices.clear();
        odd.devices.insert("ghost".into(), DeviceSettings::default());
        assert!(matches!(odd.automata(&f), Err(Error::DanglingReference { .. })));
    }

    #[test]
    fn coordinated_needs_inputs() {
        let f = feeder13();
        let cfg = SimulationConfig {
            minutes: 10,
            ..Default::default()
        };
        assert!(matches!(run(&f, &flat(10), None, &cfg), Err(Error::Config(_))));
        let short = SimulationConfig {
            mode: ControlMode::Local,
            minutes: 20,
            ..Default::default()
        };
        assert!(run(&f, &flat(10), None, &short).is_err());
    }
}
