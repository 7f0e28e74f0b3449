//! Voltage regulator control: the local deadband/time-delay tap automaton,
//! the zonal setpoint tuner and the margin that separates the two control
//! stages.
//!
//! The automaton works in volts on a 120 V base (1 pu = 120 V); the tuner
//! works in per unit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feeder::{FeederModel, VoltageRegulatorDevice, TAP_LIMIT};
use crate::ibr::Excursion;
use crate::powerflow::{regulator_secondary, solve, InjectionSet, NodalVoltageState};

pub const BASE_VOLTS: f64 = 120.0;
/// Range a tuned setpoint is clamped to, volts.
pub const SETPOINT_RANGE: (f64, f64) = (113.0, 127.0);

/// Slack on band edges and timer comparisons so that values landing exactly
/// on an edge are not split by rounding.
const EDGE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TapDirection {
    Raise,
    Lower,
}

impl TapDirection {
    pub fn step(self) -> i32 {
        match self {
            TapDirection::Raise => 1,
            TapDirection::Lower => -1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VrAutomatonState {
    pub device: usize,
    pub tap: i32,
    /// Seconds spent continuously out of band in the pending direction.
    pub timer: f64,
    pub v_set: f64,
    pub deadband: f64,
    pub time_delay: f64,
    pub pending: Option<TapDirection>,
    /// Set when a tap was due but the device sat at its limit.
    pub saturated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TapEvent {
    pub device: usize,
    pub from: i32,
    pub to: i32,
}

impl VrAutomatonState {
    pub fn new(device: usize, reg: &VoltageRegulatorDevice) -> Self {
        VrAutomatonState {
            device,
            tap: reg.tap,
            timer: 0.0,
            v_set: reg.v_set,
            deadband: reg.deadband,
            time_delay: reg.time_delay,
            pending: None,
            saturated: false,
        }
    }

    /// `[v_set - DB/2, v_set + DB/2]` in volts.
    pub fn band(&self) -> (f64, f64) {
        (self.v_set - self.deadband / 2.0, self.v_set + self.deadband / 2.0)
    }

    /// Correcting direction for a secondary voltage in volts, `None` in band.
    pub fn correction(&self, volts: f64) -> Option<TapDirection> {
        let (lo, hi) = self.band();
        if volts < lo - EDGE_EPS {
            Some(TapDirection::Raise)
        } else if volts > hi + EDGE_EPS {
            Some(TapDirection::Lower)
        } else {
            None
        }
    }
}

/// Advances one automaton by `dt` seconds during which the secondary voltage
/// was `v_secondary_pu`. Returns the tap change, if one falls due.
pub fn automaton_tick(state: &mut VrAutomatonState, v_secondary_pu: f64, dt: f64) -> Result<Option<TapEvent>> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Config(format!("automaton step must be > 0 s, got {dt}")));
    }
    let Some(dir) = state.correction(v_secondary_pu * BASE_VOLTS) else {
        state.timer = 0.0;
        state.pending = None;
        state.saturated = false;
        return Ok(None);
    };
    if state.pending != Some(dir) {
        state.timer = 0.0;
        state.pending = Some(dir);
    }
    state.timer += dt;
    if state.timer + EDGE_EPS < state.time_delay {
        return Ok(None);
    }
    state.timer = 0.0;
    let to = state.tap + dir.step();
    if to.abs() > TAP_LIMIT {
        state.saturated = true;
        return Ok(None);
    }
    let event = TapEvent {
        device: state.device,
        from: state.tap,
        to,
    };
    state.tap = to;
    Ok(Some(event))
}

/// Zonal tuner settings shared by every regulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VrTunerConfig {
    pub v2_max: f64,
    pub v2_min: f64,
    /// Deadband applied with tuned setpoints, volts.
    pub deadband: f64,
    /// Tuner cadence, minutes.
    pub cadence_min: u32,
    /// Margin between the stage limits, pu.
    pub margin: f64,
}

impl Default for VrTunerConfig {
    fn default() -> Self {
        VrTunerConfig {
            v2_max: 1.049,
            v2_min: 0.96,
            deadband: 4.0,
            cadence_min: 2,
            margin: 0.0,
        }
    }
}

impl VrTunerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.v2_min < self.v2_max) {
            return Err(Error::Config(format!(
                "v2_min {} must be below v2_max {}",
                self.v2_min, self.v2_max
            )));
        }
        if !(self.deadband > 0.0) {
            return Err(Error::Config("tuner deadband must be > 0".into()));
        }
        if self.cadence_min == 0 {
            return Err(Error::Config("tuner cadence must be >= 1 minute".into()));
        }
        first_stage_limits(self).map(|_| ())
    }
}

/// Zone extreme relative to the regulator secondary, pu. When both limits are
/// crossed the larger excursion wins.
pub fn extreme_change(critical: &[f64], v_secondary: f64, cfg: &VrTunerConfig) -> Option<(Excursion, f64)> {
    let hi = critical.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = critical.iter().copied().fold(f64::INFINITY, f64::min);
    let over = (hi >= cfg.v2_max).then_some((Excursion::Over, hi - v_secondary, hi - cfg.v2_max));
    let under = (lo <= cfg.v2_min).then_some((Excursion::Under, v_secondary - lo, cfg.v2_min - lo));
    match (over, under) {
        (Some(o), Some(u)) => Some(if u.2 > o.2 { (u.0, u.1) } else { (o.0, o.1) }),
        (Some(o), None) => Some((o.0, o.1)),
        (None, Some(u)) => Some((u.0, u.1)),
        (None, None) => None,
    }
}

/// New setpoint in volts: mean of the critical voltages when the zone is
/// inside its limits, otherwise the secondary voltage pushed away from the
/// excursion by at least half a deadband.
pub fn tune_setpoint(critical: &[f64], v_secondary: f64, cfg: &VrTunerConfig) -> f64 {
    let half_db = cfg.deadband / 2.0 / BASE_VOLTS;
    let pu = match extreme_change(critical, v_secondary, cfg) {
        None => critical.iter().sum::<f64>() / critical.len() as f64,
        Some((Excursion::Over, dv)) => v_secondary - dv.max(half_db),
        Some((Excursion::Under, dv)) => v_secondary + dv.max(half_db),
    };
    (pu * BASE_VOLTS).clamp(SETPOINT_RANGE.0, SETPOINT_RANGE.1)
}

/// Inverter-stage limits nested inside the regulator-stage limits by the
/// margin on both sides.
pub fn first_stage_limits(cfg: &VrTunerConfig) -> Result<(f64, f64)> {
    if !(cfg.margin >= 0.0 && cfg.margin.is_finite()) {
        return Err(Error::Config(format!("stage margin must be >= 0, got {}", cfg.margin)));
    }
    let v1_max = cfg.v2_max - cfg.margin;
    let v1_min = cfg.v2_min + cfg.margin;
    if !(v1_min < v1_max) {
        return Err(Error::Config(format!(
            "margin {} leaves an empty first-stage band",
            cfg.margin
        )));
    }
    Ok((v1_max, v1_min))
}

const SETTLE_PASSES: usize = 4 * TAP_LIMIT as usize;

/// Steady state of plain local control with the feeder's own settings.
pub fn settle_taps(
    feeder: &FeederModel,
    injections: &InjectionSet,
    taps: &[i32],
) -> Result<(Vec<i32>, NodalVoltageState)> {
    let devices: Vec<VrAutomatonState> = feeder
        .regulators()
        .iter()
        .enumerate()
        .map(|(i, r)| VrAutomatonState::new(i, r))
        .collect();
    settle_with(feeder, injections, taps, &devices)
}

/// Every regulator out of its band moves one step per pass until all are in
/// band or a pass limit is hit.
pub fn settle_with(
    feeder: &FeederModel,
    injections: &InjectionSet,
    taps: &[i32],
    devices: &[VrAutomatonState],
) -> Result<(Vec<i32>, NodalVoltageState)> {
    let mut taps = taps.to_vec();
    let mut state = solve(feeder, injections, &taps)?;
    for _ in 0..SETTLE_PASSES {
        let mut moved = false;
        for (r, d) in devices.iter().enumerate() {
            let v = regulator_secondary(feeder, &state, r) * BASE_VOLTS;
            if let Some(dir) = d.correction(v) {
                let to = taps[r] + dir.step();
                if to.abs() <= TAP_LIMIT {
                    taps[r] = to;
                    moved = true;
                }
            }
        }
        if !moved {
            break;
        }
        state = solve(feeder, injections, &taps)?;
    }
    Ok((taps, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feeder::RegulatorKind;

    fn device(v_set: f64, deadband: f64, delay: f64) -> VrAutomatonState {
        VrAutomatonState {
            device: 0,
            tap: 0,
            timer: 0.0,
            v_set,
            deadband,
            time_delay: delay,
            pending: None,
            saturated: false,
        }
    }

    #[test]
    fn band_edges() {
        let d = device(122.0, 4.0, 30.0);
        assert_eq!(d.band(), (120.0, 124.0));
        assert_eq!(d.correction(124.0), None);
        assert_eq!(d.correction(120.0), None);
        assert_eq!(d.correction(124.1), Some(TapDirection::Lower));
        assert_eq!(d.correction(119.9), Some(TapDirection::Raise));
    }

    #[test]
    fn taps_once_after_delay() {
        let mut d = device(122.0, 4.0, 75.0);
        let v = 125.0 / BASE_VOLTS;
        let mut events = Vec::new();
        for k in 1..=10 {
            if let Some(e) = automaton_tick(&mut d, v, 15.0).unwrap() {
                events.push((k * 15, e));
            }
        }
        assert_eq!(events[0].0, 75);
        assert_eq!(events[0].1.to, -1);
        assert_eq!(events[1].0, 150);
    }

    #[test]
    fn reentering_band_clears_timer() {
        let mut d = device(122.0, 4.0, 75.0);
        for _ in 0..4 {
            assert!(automaton_tick(&mut d, 125.0 / BASE_VOLTS, 15.0).unwrap().is_none());
        }
        assert!(automaton_tick(&mut d, 122.0 / BASE_VOLTS, 15.0).unwrap().is_none());
        assert_eq!(d.timer, 0.0);
        for _ in 0..4 {
            assert!(automaton_tick(&mut d, 125.0 / BASE_VOLTS, 15.0).unwrap().is_none());
        }
    }

    #[test]
    fn saturated_device_holds() {
        let mut d = device(122.0, 4.0, 15.0);
        d.tap = -TAP_LIMIT;
        assert!(automaton_tick(&mut d, 1.2, 15.0).unwrap().is_none());
        assert!(d.saturated);
        assert_eq!(d.tap, -TAP_LIMIT);
        assert!(automaton_tick(&mut d, 1.0, 0.0).is_err());
    }

    #[test]
    fn setpoint_cases() {
        let cfg = VrTunerConfig::default();
        assert!((tune_setpoint(&[1.01, 1.03], 1.02, &cfg) - 122.4).abs() < 1e-9);
        assert!((tune_setpoint(&[1.055, 1.0], 1.02, &cfg) - 118.2).abs() < 1e-9);
        // 0.8 V over the secondary: the half-deadband floor binds.
        let v2 = 1.05;
        let got = tune_setpoint(&[v2 + 0.8 / BASE_VOLTS], v2, &cfg);
        assert!((got - (v2 * BASE_VOLTS - 2.0)).abs() < 1e-9);
        assert!((tune_setpoint(&[0.955], 1.0, &cfg) - 125.4).abs() < 1e-9);
    }

    #[test]
    fn extreme_change_cases() {
        let cfg = VrTunerConfig::default();
        let (e, dv) = extreme_change(&[1.055, 1.0], 1.02, &cfg).unwrap();
        assert_eq!(e, Excursion::Over);
        assert!((dv - 0.035).abs() < 1e-12);
        assert!(extreme_change(&[0.97, 1.04], 1.0, &cfg).is_none());
        let (e, dv) = extreme_change(&[0.955], 1.0, &cfg).unwrap();
        assert_eq!(e, Excursion::Under);
        assert!((dv - 0.045).abs() < 1e-12);
    }

    #[test]
    fn stage_limits() {
        let mut cfg = VrTunerConfig {
            margin: 0.006,
            ..Default::default()
        };
        let (hi, lo) = first_stage_limits(&cfg).unwrap();
        assert!((hi - 1.043).abs() < 1e-12 && (lo - 0.966).abs() < 1e-12);
        cfg.margin = 0.05;
        assert!(first_stage_limits(&cfg).is_err());
        cfg.margin = -0.001;
        assert!(first_stage_limits(&cfg).is_err());
    }

    #[test]
    fn new_state_copies_device_settings() {
        let reg = VoltageRegulatorDevice {
            id: "r".into(),
            kind: RegulatorKind::Svr,
            line: "l".into(),
            phase: crate::phase::Phase::B,
            tap: 3,
            step_pu: 0.00625,
            v_set: 123.0,
            deadband: 4.0,
            time_delay: 45.0,
        };
        let s = VrAutomatonState::new(2, &reg);
        assert_eq!((s.device, s.tap, s.v_set, s.time_delay), (2, 3, 123.0, 45.0));
    }
}
