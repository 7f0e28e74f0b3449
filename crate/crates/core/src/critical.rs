//! Critical-node selection: Monte Carlo power flows record which nodes carry
//! each zone's extreme voltages, frequent extremes are kept outright and rare
//! ones only when their voltage differs enough from every frequent one.

use std::collections::BTreeMap;
use std::fmt;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feeder::{FeederModel, Node};
use crate::phase::Phase;
use crate::powerflow::solve;
use crate::scenario::{check_source, draw_rng, ScenarioSource, Stream};
use crate::sensitivity::par_map;
use crate::vr::settle_taps;
use crate::zoning::ZonePartition;

pub const DEFAULT_THRESHOLD_PERCENT: f64 = 5.0;
pub const DEFAULT_DELTA_V_TH: f64 = 0.001;

/// Identity of a monitored zone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ZoneKey {
    Ibr { phase: Phase, index: usize },
    Vr { device: usize },
}

impl fmt::Display for ZoneKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ZoneKey::Ibr { phase, index } => write!(f, "ibr:{phase}{}", index + 1),
            ZoneKey::Vr { device } => write!(f, "vr:{device}"),
        }
    }
}

/// A zone as seen by the Monte Carlo study.
#[derive(Debug, Clone, PartialEq)]
pub struct MonitoredZone {
    pub key: ZoneKey,
    pub phase: Phase,
    pub members: Vec<Node>,
}

/// Every inverter zone followed by every regulator zone.
pub fn monitored_zones(partition: &ZonePartition) -> Vec<MonitoredZone> {
    let ibr = partition.ibr_zones().map(|z| MonitoredZone {
        key: ZoneKey::Ibr {
            phase: z.phase,
            index: z.index,
        },
        phase: z.phase,
        members: z.members.clone(),
    });
    let vr = partition.vr.iter().map(|z| MonitoredZone {
        key: ZoneKey::Vr { device: z.device },
        phase: z.phase,
        members: z.members.clone(),
    });
    ibr.chain(vr).collect()
}

/// Extremes of one zone across the successful runs.
#[derive(Debug, Clone, PartialEq)]
pub struct ZoneOccurrences {
    pub zone: MonitoredZone,
    /// Per run: (highest-voltage node, lowest-voltage node).
    pub extremes: Vec<(Node, Node)>,
}

impl ZoneOccurrences {
    /// Runs in which `node` was the zone's highest or lowest voltage.
    pub fn runs_of(&self, node: Node) -> Vec<usize> {
        self.extremes
            .iter()
            .enumerate()
            .filter(|(_, (hi, lo))| *hi == node || *lo == node)
            .map(|(i, _)| i)
            .collect()
    }

    /// Occurrence count per ever-extreme node. A node that is both maximum
    /// and minimum in one run (single-member zone) counts that run once.
    pub fn counts(&self) -> BTreeMap<Node, usize> {
        let mut counts = BTreeMap::new();
        for &(hi, lo) in &self.extremes {
            *counts.entry(hi).or_insert(0) += 1;
            if lo != hi {
                *counts.entry(lo).or_insert(0) += 1;
            }
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccurrenceRecord {
    /// Successful runs C.
    pub runs: usize,
    /// Indices of sampled runs whose power flow failed.
    pub discarded: Vec<usize>,
    /// Nodes whose voltage is kept for every run, sorted.
    pub nodes: Vec<Node>,
    /// `voltages[run][k]` is the magnitude of `nodes[k]` in that run.
    pub voltages: Vec<Vec<f64>>,
    pub zones: Vec<ZoneOccurrences>,
}

impl OccurrenceRecord {
    pub fn voltage(&self, node: Node, run: usize) -> Option<f64> {
        let k = self.nodes.binary_search(&node).ok()?;
        self.voltages.get(run).map(|row| row[k])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloOptions {
    pub runs: usize,
    pub seed: u64,
    /// Let regulators reach their local steady state in every run.
    pub settle_regulators: bool,
}

impl Default for MonteCarloOptions {
    fn default() -> Self {
        MonteCarloOptions {
            runs: 10_000,
            seed: 1,
            settle_regulators: true,
        }
    }
}

fn argmax_argmin(members: &[Node], v: impl Fn(Node) -> f64) -> (Node, Node) {
    let mut hi = (members[0], v(members[0]));
    let mut lo = hi;
    for &n in &members[1..] {
        let x = v(n);
        if x > hi.1 {
            hi = (n, x);
        }
        if x < lo.1 {
            lo = (n, x);
        }
    }
    (hi.0, lo.0)
}

pub fn monte_carlo_extremes(
    feeder: &FeederModel,
    zones: &[MonitoredZone],
    source: &ScenarioSource<'_>,
    options: &MonteCarloOptions,
) -> Result<OccurrenceRecord> {
    if options.runs == 0 {
        return Err(Error::Config("Monte Carlo needs at least one run".into()));
    }
    if let Some(z) = zones.iter().find(|z| z.members.is_empty()) {
        return Err(Error::Unmonitorable {
            zone: z.key.to_string(),
        });
    }
    check_source(feeder, source)?;
    let mut nodes: Vec<Node> = zones.iter().flat_map(|z| z.members.iter().copied()).collect();
    nodes.sort_unstable();
    nodes.dedup();

    let outcomes = par_map(options.runs, |i| -> Result<Vec<f64>> {
        let op = source.sample(feeder, &mut draw_rng(options.seed, Stream::CriticalNodes, i as u64));
        let inj = op.injections(feeder);
        let state = if options.settle_regulators {
            settle_taps(feeder, &inj, &feeder.initial_taps())?.1
        } else {
            solve(feeder, &inj, &feeder.initial_taps())?
        };
        Ok(nodes.iter().map(|&n| state.magnitude(n)).collect())
    });

    let mut voltages = Vec::with_capacity(options.runs);
    let mut discarded = Vec::new();
    for (i, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(row) => voltages.push(row),
            Err(e) => {
                warn!("Monte Carlo run {i} discarded: {e}");
                discarded.push(i);
            }
        }
    }
    let zone_records = zones
        .iter()
        .map(|z| {
            let pos: Vec<usize> = z
                .members
                .iter()
                .map(|n| nodes.binary_search(n).expect("member collected"))
                .collect();
            let extremes = voltages
                .iter()
                .map(|row| {
                    let lookup = |n: Node| row[pos[z.members.binary_search(&n).expect("member")]];
                    argmax_argmin(&z.members, lookup)
                })
                .collect();
            ZoneOccurrences {
                zone: z.clone(),
                extremes,
            }
        })
        .collect();
    Ok(OccurrenceRecord {
        runs: voltages.len(),
        discarded,
        nodes,
        voltages,
        zones: zone_records,
    })
}

/// Occurrence percentage `c / C * 100`.
pub fn occurrence_percent(count: usize, runs: usize) -> f64 {
    count as f64 / runs as f64 * 100.0
}

fn meets_threshold(count: usize, runs: usize, th_percent: f64) -> bool {
    // count / runs * 100 >= th, rearranged to stay exact at the boundary.
    count as f64 * 100.0 >= th_percent * runs as f64
}

/// High-occurrence group X and low-occurrence group Y of one zone, each as
/// (node, count) sorted by count descending then node.
pub fn split_by_occurrence(
    zone: &ZoneOccurrences,
    runs: usize,
    th_percent: f64,
) -> (Vec<(Node, usize)>, Vec<(Node, usize)>) {
    let mut ranked: Vec<(Node, usize)> = zone.counts().into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
        .into_iter()
        .partition(|&(_, c)| meets_threshold(c, runs, th_percent))
}

/// Outcome of the voltage-difference test for one candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceVerdict {
    /// Largest difference per existing critical node over the candidate's runs.
    pub row_max: Vec<f64>,
    /// Smallest of the row maxima.
    pub min: f64,
    pub accepted: bool,
}

/// Applies the test to a difference matrix with one row per existing
/// critical node and one column per run of the candidate: row maxima, then
/// their minimum; the candidate is rejected iff that minimum is below
/// `delta_v_th`.
pub fn difference_test(matrix: &[Vec<f64>], delta_v_th: f64) -> DifferenceVerdict {
    let row_max: Vec<f64> = matrix
        .iter()
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let min = row_max.iter().copied().fold(f64::INFINITY, f64::min);
    DifferenceVerdict {
        accepted: !(min < delta_v_th),
        row_max,
        min,
    }
}

/// `|V_y - V_x|` for every existing critical node x (rows) over the runs in
/// which y was extreme (columns).
pub fn difference_matrix(
    feeder: &FeederModel,
    record: &OccurrenceRecord,
    zone: &ZoneOccurrences,
    y: Node,
    x: &[Node],
) -> Result<Vec<Vec<f64>>> {
    let runs = zone.runs_of(y);
    let get = |n: Node, run: usize| {
        record.voltage(n, run).ok_or_else(|| Error::MissingRecord {
            node: feeder.node_label(n),
            run,
        })
    };
    x.iter()
        .map(|&xu| runs.iter().map(|&i| Ok((get(y, i)? - get(xu, i)?).abs())).collect())
        .collect()
}

pub fn voltage_difference_test(
    feeder: &FeederModel,
    record: &OccurrenceRecord,
    zone: &ZoneOccurrences,
    y: Node,
    x: &[Node],
    delta_v_th: f64,
) -> Result<DifferenceVerdict> {
    if x.is_empty() {
        return Err(Error::Config("difference test needs at least one critical node".into()));
    }
    Ok(difference_test(
        &difference_matrix(feeder, record, zone, y, x)?,
        delta_v_th,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub th_percent: f64,
    pub delta_v_th: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            th_percent: DEFAULT_THRESHOLD_PERCENT,
            delta_v_th: DEFAULT_DELTA_V_TH,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZoneCritical {
    pub key: ZoneKey,
    pub phase: Phase,
    pub x: Vec<(Node, usize)>,
    pub y: Vec<(Node, usize)>,
    /// Members of Y that passed the difference test (or were promoted).
    pub accepted_y: Vec<Node>,
    pub final_set: Vec<Node>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticalNodeSet {
    pub thresholds: Thresholds,
    pub runs: usize,
    pub zones: Vec<ZoneCritical>,
}

impl CriticalNodeSet {
    pub fn zone(&self, key: ZoneKey) -> Option<&ZoneCritical> {
        self.zones.iter().find(|z| z.key == key)
    }

    /// Distinct buses carrying at least one critical node.
    pub fn distinct_buses(&self) -> Vec<usize> {
        let mut b: Vec<usize> = self
            .zones
            .iter()
            .flat_map(|z| z.final_set.iter().map(|n| n.bus))
            .collect();
        b.sort_unstable();
        b.dedup();
        b
    }
}

pub fn finalize(feeder: &FeederModel, record: &OccurrenceRecord, thresholds: &Thresholds) -> Result<CriticalNodeSet> {
    if !(thresholds.th_percent >= 0.0 && thresholds.th_percent <= 100.0) {
        return Err(Error::Config(format!(
            "TH must lie in [0, 100], got {}",
            thresholds.th_percent
        )));
    }
    if !(thresholds.delta_v_th >= 0.0) {
        return Err(Error::Config("delta_v_th must be >= 0".into()));
    }
    let mut zones = Vec::with_capacity(record.zones.len());
    for zone in &record.zones {
        let (x, y) = split_by_occurrence(zone, record.runs, thresholds.th_percent);
        let mut final_set: Vec<Node> = x.iter().map(|&(n, _)| n).collect();
        let mut accepted_y = Vec::new();
        if final_set.is_empty() {
            if y.is_empty() {
                return Err(Error::Unmonitorable {
                    zone: zone.zone.key.to_string(),
                });
            }
            let (top, _) = y[0];
            accepted_y.push(top);
            final_set.push(top);
        }
        let anchors = final_set.clone();
        for &(cand, _) in &y {
            if anchors.contains(&cand) {
                continue;
            }
            if voltage_difference_test(feeder, record, zone, cand, &anchors, thresholds.delta_v_th)?.accepted {
                accepted_y.push(cand);
                final_set.push(cand);
            }
        }
        final_set.sort_unstable();
        zones.push(ZoneCritical {
            key: zone.zone.key,
            phase: zone.zone.phase,
            x,
            y,
            accepted_y,
            final_set,
        });
    }
    Ok(CriticalNodeSet {
        thresholds: thresholds.clone(),
        runs: record.runs,
        zones,
    })
}

/// Copies the final sets into the partition's zones.
pub fn attach(partition: &mut ZonePartition, set: &CriticalNodeSet) -> Result<()> {
    for zc in &set.zones {
        let slot = match zc.key {
            ZoneKey::Ibr { phase, index } => partition
                .ibr
                .get_mut(&phase)
                .and_then(|zs| zs.get_mut(index))
                .map(|z| &mut z.critical),
            ZoneKey::Vr { device } => partition
                .vr
                .iter_mut()
                .find(|z| z.device == device)
                .map(|z| &mut z.critical),
        };
        let slot = slot.ok_or_else(|| Error::Stale(format!("zone {} is not in the partition", zc.key)))?;
        *slot = zc.final_set.clone();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example_is_rejected() {
        let m = vec![
            vec![0.0018, 0.0018, 0.0017, 0.0017],
            vec![4.1e-4, 3.8e-4, 4.5e-4, 4.4e-4],
        ];
        let v = difference_test(&m, 0.001);
        assert_eq!(v.row_max, vec![0.0018, 4.5e-4]);
        assert_eq!(v.min, 4.5e-4);
        assert!(!v.accepted);
    }

    #[test]
    fn boundary_difference_is_accepted() {
        assert!(difference_test(&[vec![0.001]], 0.001).accepted);
        assert!(!difference_test(&[vec![0.000999]], 0.001).accepted);
    }

    #[test]
    fn threshold_is_inclusive() {
        assert!(meets_threshold(5, 100, 5.0));
        assert!(!meets_threshold(4, 100, 5.0));
        assert!(!meets_threshold(4, 10_000, 5.0));
        assert!(meets_threshold(10_000, 10_000, 5.0));
        assert!(meets_threshold(1, 7, 0.0));
    }

    #[test]
    fn counts_and_runs() {
        let a = Node::new(0, Phase::A);
        let b = Node::new(1, Phase::A);
        let c = Node::new(2, Phase::A);
        let zone = ZoneOccurrences {
            zone: MonitoredZone {
                key: ZoneKey::Vr { device: 0 },
                phase: Phase::A,
                members: vec![a, b, c],
            },
            extremes: vec![(a, b), (a, c), (b, c), (a, b)],
        };
        let counts = zone.counts();
        assert_eq!(counts[&a], 3);
        assert_eq!(counts[&b], 3);
        assert_eq!(counts[&c], 2);
        assert_eq!(zone.runs_of(c), vec![1, 2]);
        let (x, y) = split_by_occurrence(&zone, 4, 60.0);
        assert_eq!(x, vec![(a, 3), (b, 3)]);
        assert_eq!(y, vec![(c, 2)]);
    }
}
