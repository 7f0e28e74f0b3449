//! Inverter stage: per-zone detection of limit violations at critical nodes,
//! reactive requirement from the node's self-sensitivity, sequential dispatch
//! along a correlation-ranked priority list and staged release.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feeder::{FeederModel, Node};
use crate::sensitivity::{CorrelationMatrix, VlsmQ};
use crate::zoning::{IbrZone, DEFAULT_ALPHA};

/// Which limit a zone crossed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Excursion {
    Over,
    Under,
}

impl Excursion {
    /// Sign of the corrective reactive setpoint: absorb for over-voltage,
    /// inject for under-voltage.
    pub fn sign(self) -> f64 {
        match self {
            Excursion::Over => -1.0,
            Excursion::Under => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IbrControllerConfig {
    pub v1_max: f64,
    pub v1_min: f64,
    pub eps_u: f64,
    pub eps_d: f64,
    /// Divisor applied to the self-sensitivity when sizing a request.
    pub alpha: f64,
    /// Minutes between controller steps.
    pub cadence_min: u32,
}

impl Default for IbrControllerConfig {
    fn default() -> Self {
        IbrControllerConfig {
            v1_max: 1.049,
            v1_min: 0.96,
            eps_u: 0.001,
            eps_d: 0.001,
            alpha: DEFAULT_ALPHA,
            cadence_min: 1,
        }
    }
}

impl IbrControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.v1_min < self.v1_max) {
            return Err(Error::Config(format!(
                "v1_min {} must be below v1_max {}",
                self.v1_min, self.v1_max
            )));
        }
        if !(self.eps_u > 0.0 && self.eps_d > 0.0) {
            return Err(Error::Config("eps_u and eps_d must be > 0".into()));
        }
        if !(self.v1_min + self.eps_d < self.v1_max - self.eps_u) {
            return Err(Error::Config("return margins leave an empty reset band".into()));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        if self.cadence_min == 0 {
            return Err(Error::Config("inverter cadence must be >= 1 minute".into()));
        }
        Ok(())
    }

    /// `[v1_min + eps_d, v1_max - eps_u]`.
    pub fn reset_band(&self) -> (f64, f64) {
        (self.v1_min + self.eps_d, self.v1_max - self.eps_u)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    pub excursion: Excursion,
    /// Critical node carrying the extreme.
    pub node: Node,
    /// Distance beyond the limit, pu.
    pub delta_v: f64,
}

/// Checks the critical readings against the first-stage limits. When both
/// limits are crossed the larger excursion wins; ties go to over-voltage.
pub fn detect_violation(readings: &[(Node, f64)], cfg: &IbrControllerConfig) -> Option<Violation> {
    let (&(hi_node, hi), &(lo_node, lo)) = extremes(readings)?;
    let over = (hi >= cfg.v1_max).then_some(Violation {
        excursion: Excursion::Over,
        node: hi_node,
        delta_v: hi - cfg.v1_max,
    });
    let under = (lo <= cfg.v1_min).then_some(Violation {
        excursion: Excursion::Under,
        node: lo_node,
        delta_v: cfg.v1_min - lo,
    });
    match (over, under) {
        (Some(o), Some(u)) => Some(if u.delta_v > o.delta_v { u } else { o }),
        (o, u) => o.or(u),
    }
}

/// First highest and first lowest reading.
fn extremes(readings: &[(Node, f64)]) -> Option<(&(Node, f64), &(Node, f64))> {
    let first = readings.first()?;
    let mut hi = first;
    let mut lo = first;
    for r in &readings[1..] {
        if r.1 > hi.1 {
            hi = r;
        }
        if r.1 < lo.1 {
            lo = r;
        }
    }
    Some((hi, lo))
}

/// Reactive power magnitude, kvar, expected to move the node by `delta_v`.
pub fn required_reactive(delta_v: f64, q_rr: f64, alpha: f64) -> Result<f64> {
    if !(q_rr > 0.0 && q_rr.is_finite()) {
        return Err(Error::InvalidSensitivity(format!(
            "self-sensitivity must be > 0, got {q_rr}"
        )));
    }
    Ok(delta_v / (alpha * q_rr))
}

/// Inverters of one zone ordered by correlation with an extreme node.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorityList {
    pub zone: usize,
    pub extreme: Node,
    /// PV indices, highest correlation first; ties by PV index.
    pub inverters: Vec<usize>,
}

impl PriorityList {
    pub fn build(
        feeder: &FeederModel,
        zone: usize,
        inverters: &[usize],
        extreme: Node,
        corr: &CorrelationMatrix,
    ) -> Result<Self> {
        let mut ranked = Vec::with_capacity(inverters.len());
        for &pv in inverters {
            let v = feeder.pv_node(pv);
            let c = corr.coefficient(v, extreme).ok_or_else(|| {
                Error::Stale(format!(
                    "no correlation between {} and {}",
                    feeder.node_label(v),
                    feeder.node_label(extreme)
                ))
            })?;
            ranked.push((pv, c));
        }
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(PriorityList {
            zone,
            extreme,
            inverters: ranked.into_iter().map(|(pv, _)| pv).collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZoneMode {
    Idle,
    CorrectingOver,
    CorrectingUnder,
    Resetting,
}

impl ZoneMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ZoneMode::Idle => "idle",
            ZoneMode::CorrectingOver => "correcting-over",
            ZoneMode::CorrectingUnder => "correcting-under",
            ZoneMode::Resetting => "resetting",
        }
    }
}

/// Reactive setpoints per inverter (kvar, positive = injection) and the mode
/// of every zone.
#[derive(Debug, Clone, PartialEq)]
pub struct DispatchLedger {
    pub setpoints: Vec<f64>,
    pub modes: Vec<ZoneMode>,
    /// Unserved part of the last request per zone, kvar.
    pub shortfall: Vec<f64>,
}

impl DispatchLedger {
    pub fn new(inverters: usize, zones: usize) -> Self {
        DispatchLedger {
            setpoints: vec![0.0; inverters],
            modes: vec![ZoneMode::Idle; zones],
            shortfall: vec![0.0; zones],
        }
    }

    /// Pulls setpoints back inside the capabilities; returns (pv, delta) for
    /// every inverter that moved.
    pub fn clamp_to(&mut self, capability: &[f64]) -> Vec<(usize, f64)> {
        let mut moved = Vec::new();
        for (pv, (sp, &cap)) in self.setpoints.iter_mut().zip(capability).enumerate() {
            let clamped = sp.clamp(-cap, cap);
            if clamped != *sp {
                moved.push((pv, clamped - *sp));
                *sp = clamped;
            }
        }
        moved
    }
}

/// One setpoint change.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Allocation {
    pub pv: usize,
    pub delta_kvar: f64,
    pub setpoint_kvar: f64,
}

/// Fills a signed request (kvar) down the list. Each inverter gives at most its
/// headroom in the request's direction. Returns the allocations and the
/// unserved remainder.
pub fn dispatch(request: f64, list: &[usize], setpoints: &mut [f64], capability: &[f64]) -> (Vec<Allocation>, f64) {
    let sign = request.signum();
    let mut remaining = request.abs();
    let mut out = Vec::new();
    for &pv in list {
        if remaining <= 0.0 {
            break;
        }
        let headroom = (capability[pv] - sign * setpoints[pv]).max(0.0);
        let take = remaining.min(headroom);
        if take > 0.0 {
            setpoints[pv] += sign * take;
            remaining -= take;
            out.push(Allocation {
                pv,
                delta_kvar: sign * take,
                setpoint_kvar: setpoints[pv],
            });
        }
    }
    (out, remaining)
}

/// Moves setpoints that correct `direction` back toward zero, walking the
/// list bottom-up and releasing at most `amount` kvar in total.
///
/// `budget[u]` is the voltage room (pu) left at critical node `u` before it
/// would leave the reset band, and `sens(u, pv)` its linear response to one
/// kvar at `pv`; no inverter is released further than the tightest budget
/// allows.
fn release(
    amount: f64,
    list: &[usize],
    setpoints: &mut [f64],
    direction: Excursion,
    budget: &mut [f64],
    sens: impl Fn(usize, usize) -> f64,
) -> Vec<Allocation> {
    let held = direction.sign();
    let mut remaining = amount;
    let mut out = Vec::new();
    for &pv in list.iter().rev() {
        if remaining <= 0.0 {
            break;
        }
        let sp = setpoints[pv];
        if sp * held <= 0.0 {
            continue;
        }
        let mut take = remaining.min(sp.abs());
        for (u, &room) in budget.iter().enumerate() {
            let s = sens(u, pv);
            if s > 0.0 {
                take = take.min(room.max(0.0) / s);
            }
        }
        if take <= 0.0 {
            break;
        }
        for (u, room) in budget.iter_mut().enumerate() {
            *room -= take * sens(u, pv).max(0.0);
        }
        let new = if take == sp.abs() { 0.0 } else { sp - held * take };
        remaining -= take;
        setpoints[pv] = new;
        out.push(Allocation {
            pv,
            delta_kvar: new - sp,
            setpoint_kvar: new,
        });
    }
    out
}

/// What one controller step did.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub mode: ZoneMode,
    pub extreme: Option<Node>,
    pub allocations: Vec<Allocation>,
    /// Set when a reading was missing and the step held its last action.
    pub telemetry_fault: bool,
}

/// Controller for one inverter zone.
#[derive(Debug, Clone, PartialEq)]
pub struct ZoneController {
    /// Position of the zone in the ledger.
    pub slot: usize,
    pub critical: Vec<Node>,
    /// Self-sensitivity per critical node, pu/kvar.
    pub q_rr: Vec<f64>,
    pub lists: Vec<PriorityList>,
    /// Zone inverters (PV indices, ascending) and, per critical node, its
    /// sensitivity to each of them, pu/kvar.
    inverters: Vec<usize>,
    response: Vec<Vec<f64>>,
    /// Index of the list in use (the last extreme acted on).
    active: Option<usize>,
}

impl ZoneController {
    pub fn new(
        feeder: &FeederModel,
        slot: usize,
        zone: &IbrZone,
        vlsm: &VlsmQ,
        corr: &CorrelationMatrix,
    ) -> Result<Self> {
        let label = zone.label();
        if zone.critical.is_empty() {
            return Err(Error::Unmonitorable { zone: label });
        }
        let inverters: Vec<usize> = (0..feeder.pv().len())
            .filter(|&pv| zone.members.binary_search(&feeder.pv_node(pv)).is_ok())
            .collect();
        let mut q_rr = Vec::with_capacity(zone.critical.len());
        let mut lists = Vec::with_capacity(zone.critical.len());
        for &r in &zone.critical {
            let q = vlsm
                .diagonal(r)
                .ok_or_else(|| Error::Stale(format!("no sensitivity for critical node {}", feeder.node_label(r))))?;
            if !(q > 0.0) {
                return Err(Error::InvalidSensitivity(format!(
                    "self-sensitivity of {} is {q}",
                    feeder.node_label(r)
                )));
            }
            q_rr.push(q);
            lists.push(PriorityList::build(feeder, slot, &inverters, r, corr)?);
        }
        // An inverter off the sensitivity grid is bounded by the node's own
        // sensitivity, which dominates every transfer term on a radial feeder.
        let response = zone
            .critical
            .iter()
            .zip(&q_rr)
            .map(|(&r, &q)| {
                inverters
                    .iter()
                    .map(|&pv| {
                        let col = feeder.pv_node(pv);
                        vlsm.phase(r.phase).and_then(|m| m.get(r, col)).unwrap_or(q)
                    })
                    .collect()
            })
            .collect();
        Ok(ZoneController {
            slot,
            critical: zone.critical.clone(),
            q_rr,
            lists,
            inverters,
            response,
            active: None,
        })
    }

    fn position(&self, node: Node) -> usize {
        self.critical.iter().position(|&c| c == node).expect("critical node")
    }

    /// One step on the critical readings (in the order of `critical`).
    pub fn step(
        &mut self,
        readings: &[Option<f64>],
        ledger: &mut DispatchLedger,
        capability: &[f64],
        cfg: &IbrControllerConfig,
    ) -> Result<StepOutcome> {
        let mode = ledger.modes[self.slot];
        let hold = StepOutcome {
            mode,
            extreme: None,
            allocations: Vec::new(),
            telemetry_fault: false,
        };
        if readings.len() != self.critical.len() || readings.iter().any(Option::is_none) {
            return Ok(StepOutcome {
                telemetry_fault: true,
                ..hold
            });
        }
        let values: Vec<(Node, f64)> = self
            .critical
            .iter()
            .zip(readings)
            .map(|(&n, v)| (n, v.expect("checked")))
            .collect();

        if let Some(v) = detect_violation(&values, cfg) {
            let k = self.position(v.node);
            self.active = Some(k);
            let amount = required_reactive(v.delta_v, self.q_rr[k], cfg.alpha)?;
            let (allocations, shortfall) = dispatch(
                v.excursion.sign() * amount,
                &self.lists[k].inverters,
                &mut ledger.setpoints,
                capability,
            );
            let mode = match v.excursion {
                Excursion::Over => ZoneMode::CorrectingOver,
                Excursion::Under => ZoneMode::CorrectingUnder,
            };
            ledger.modes[self.slot] = mode;
            ledger.shortfall[self.slot] = shortfall;
            return Ok(StepOutcome {
                mode,
                extreme: Some(v.node),
                allocations,
                telemetry_fault: false,
            });
        }

        let list = match self.active {
            Some(k) => &self.lists[k].inverters,
            None => return Ok(hold),
        };
        let held = |dir: Excursion| list.iter().any(|&pv| ledger.setpoints[pv] * dir.sign() > 0.0);
        let direction = if held(Excursion::Over) {
            Excursion::Over
        } else if held(Excursion::Under) {
            Excursion::Under
        } else {
            ledger.modes[self.slot] = ZoneMode::Idle;
            return Ok(StepOutcome {
                mode: ZoneMode::Idle,
                ..hold
            });
        };

        let (lo, hi) = cfg.reset_band();
        if values.iter().any(|&(_, x)| x < lo || x > hi) {
            // Between the reset band and a limit: hold.
            return Ok(hold);
        }
        let (&(hi_node, v_hi), &(lo_node, v_lo)) = extremes(&values).expect("non-empty readings");
        let (node, margin) = match direction {
            Excursion::Over => (hi_node, hi - v_hi),
            Excursion::Under => (lo_node, v_lo - lo),
        };
        let amount = required_reactive(margin, self.q_rr[self.position(node)], cfg.alpha)?;
        let mut budget: Vec<f64> = values
            .iter()
            .map(|&(_, x)| match direction {
                Excursion::Over => hi - x,
                Excursion::Under => x - lo,
            })
            .collect();
        let (inverters, response) = (&self.inverters, &self.response);
        let sens = |u: usize, pv: usize| inverters.binary_search(&pv).map_or(self.q_rr[u], |i| response[u][i]);
        let allocations = release(amount, list, &mut ledger.setpoints, direction, &mut budget, sens);
        let mode = if list.iter().all(|&pv| ledger.setpoints[pv] == 0.0) {
            ZoneMode::Idle
        } else {
            ZoneMode::Resetting
        };
        ledger.modes[self.slot] = mode;
        Ok(StepOutcome {
            mode,
            extreme: Some(node),
            allocations,
            telemetry_fault: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase::Phase;

    fn n(b: usize) -> Node {
        Node::new(b, Phase::A)
    }

    #[test]
    fn detection_cases() {
        let cfg = IbrControllerConfig {
            v1_max: 1.043,
            ..Default::default()
        };
        let v = detect_violation(&[(n(1), 1.055), (n(2), 1.040)], &cfg).unwrap();
        assert_eq!((v.excursion, v.node), (Excursion::Over, n(1)));
        assert!((v.delta_v - 0.012).abs() < 1e-12);
        assert!(detect_violation(&[(n(1), 0.999), (n(2), 1.001)], &cfg).is_none());
        let v = detect_violation(&[(n(3), 0.955)], &cfg).unwrap();
        assert_eq!(v.excursion, Excursion::Under);
        assert!((v.delta_v - 0.005).abs() < 1e-12);
        // Both limits crossed: the under-voltage excursion is larger.
        let v = detect_violation(&[(n(1), 1.044), (n(2), 0.95)], &cfg).unwrap();
        assert_eq!(v.excursion, Excursion::Under);
    }

    #[test]
    fn requirement_arithmetic() {
        assert!((required_reactive(0.012, 5e-4, 0.96).unwrap() - 25.0).abs() < 1e-9);
        assert_eq!(required_reactive(0.0, 5e-4, 0.96).unwrap(), 0.0);
        assert!(required_reactive(0.01, 0.0, 0.96).is_err());
        assert!(required_reactive(0.01, -1e-4, 0.96).is_err());
    }

    #[test]
    fn sequential_fill() {
        let mut sp = vec![0.0; 3];
        let (a, short) = dispatch(-25.0, &[0, 1, 2], &mut sp, &[30.0, 30.0, 30.0]);
        assert_eq!(a.len(), 1);
        assert_eq!(sp, vec![-25.0, 0.0, 0.0]);
        assert_eq!(short, 0.0);

        let mut sp = vec![0.0; 3];
        dispatch(-25.0, &[0, 1, 2], &mut sp, &[10.0, 10.0, 10.0]);
        assert_eq!(sp, vec![-10.0, -10.0, -5.0]);

        let mut sp = vec![0.0; 4];
        let (_, short) = dispatch(100.0, &[3, 2, 1, 0], &mut sp, &[10.0; 4]);
        assert_eq!(sp, vec![10.0; 4]);
        assert_eq!(short, 60.0);
    }

    #[test]
    fn release_drains_from_the_bottom() {
        let mut sp = vec![-10.0, -10.0, -5.0];
        let out = release(7.0, &[0, 1, 2], &mut sp, Excursion::Over, &mut [1.0], |_, _| 1e-3);
        assert_eq!(sp, vec![-10.0, -8.0, 0.0]);
        assert_eq!(out[0].pv, 2);
        assert_eq!(out[1].delta_kvar, 2.0);
    }

    #[test]
    fn release_stops_at_the_band() {
        // 4 mpu of room at 1 mpu/kvar allows only 4 kvar back.
        let mut sp = vec![-10.0, -10.0];
        release(20.0, &[0, 1], &mut sp, Excursion::Over, &mut [0.004], |_, _| 1e-3);
        assert!((sp[1] + 6.0).abs() < 1e-9);
        assert_eq!(sp[0], -10.0);
    }

    #[test]
    fn clamp_follows_capability() {
        let mut ledger = DispatchLedger::new(2, 1);
        ledger.setpoints = vec![-8.0, 3.0];
        let moved = ledger.clamp_to(&[5.0, 5.0]);
        assert_eq!(moved, vec![(0, 3.0)]);
        assert_eq!(ledger.setpoints, vec![-5.0, 3.0]);
    }
}
