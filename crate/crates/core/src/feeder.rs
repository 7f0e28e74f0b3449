//! Static feeder description: buses, line segments, regulators, loads and PV,
//! plus the JSON document format and radial topology validation.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::phase::{Phase, PhaseSet};

pub const TAP_LIMIT: i32 = 16;
pub const DEFAULT_TAP_STEP: f64 = 0.00625;
pub const DEFAULT_OVERSIZE: f64 = 1.10;
pub const DEFAULT_POWER_FACTOR: f64 = 0.95;

/// One phase conductor at one bus; the unit the controllers measure and cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Node {
    pub bus: usize,
    pub phase: Phase,
}

impl Node {
    pub fn new(bus: usize, phase: Phase) -> Self {
        Node { bus, phase }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: String,
    pub phases: PhaseSet,
    /// Line-to-neutral base, kV.
    pub base_kv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineSegment {
    pub id: String,
    pub from: String,
    pub to: String,
    pub length_km: f64,
    /// Per-length phase impedance matrix, ohm/km, as `[r, x]` pairs over the
    /// segment phases in a-b-c order.
    pub z: Vec<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegulatorKind {
    Oltc,
    Svr,
}

/// A single-phase step regulator unit. Three-phase regulators are three units
/// on the same segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoltageRegulatorDevice {
    pub id: String,
    pub kind: RegulatorKind,
    /// Id of the segment the unit sits on; its secondary is the downstream end.
    pub line: String,
    pub phase: Phase,
    #[serde(default)]
    pub tap: i32,
    #[serde(default = "default_tap_step")]
    pub step_pu: f64,
    /// Volts on the 120 V base.
    pub v_set: f64,
    /// Full band width, volts on the 120 V base.
    pub deadband: f64,
    /// Seconds.
    pub time_delay: f64,
}

impl VoltageRegulatorDevice {
    pub fn is_substation_oltc(&self) -> bool {
        self.kind == RegulatorKind::Oltc
    }

    pub fn ratio(&self, tap: i32) -> f64 {
        tap_ratio(tap, self.step_pu)
    }
}

/// Ideal regulator ratio for a tap position.
pub fn tap_ratio(tap: i32, step_pu: f64) -> f64 {
    1.0 + tap as f64 * step_pu
}

fn default_tap_step() -> f64 {
    DEFAULT_TAP_STEP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadPoint {
    pub bus: String,
    pub phase: Phase,
    /// Nominal demand used when no profile is given and for scenario sampling.
    pub peak_kw: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power_factor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kvar_profile: Option<String>,
}

impl LoadPoint {
    pub fn power_factor(&self) -> f64 {
        self.power_factor.unwrap_or(DEFAULT_POWER_FACTOR)
    }

    /// Reactive demand implied by the power factor for `kw` of active demand.
    pub fn kvar_for(&self, kw: f64) -> f64 {
        let pf = self.power_factor();
        kw * (1.0 - pf * pf).max(0.0).sqrt() / pf
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PvSystem {
    pub id: String,
    pub bus: String,
    pub phase: Phase,
    pub rated_kw: f64,
    #[serde(default = "default_oversize")]
    pub oversize: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<String>,
}

fn default_oversize() -> f64 {
    DEFAULT_OVERSIZE
}

impl PvSystem {
    pub fn inverter_kva(&self) -> f64 {
        self.oversize * self.rated_kw
    }

    /// Reactive headroom at active output `p_kw`: sqrt(kva^2 - p^2), floored at 0.
    pub fn reactive_capability(&self, p_kw: f64) -> f64 {
        let kva = self.inverter_kva();
        (kva * kva - p_kw * p_kw).max(0.0).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Source {
    pub bus: String,
    /// Line-to-line nominal, kV.
    pub nominal_kv: f64,
    #[serde(default = "one")]
    pub voltage_pu: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeederDocument {
    buses: Vec<Bus>,
    lines: Vec<LineSegment>,
    #[serde(default)]
    regulators: Vec<VoltageRegulatorDevice>,
    #[serde(default)]
    loads: Vec<LoadPoint>,
    #[serde(default)]
    pv: Vec<PvSystem>,
    source: Source,
}

#[derive(Debug, Serialize)]
struct FeederDocumentRef<'a> {
    buses: &'a [Bus],
    lines: &'a [LineSegment],
    regulators: &'a [VoltageRegulatorDevice],
    loads: &'a [LoadPoint],
    pv: &'a [PvSystem],
    source: &'a Source,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feed {
    pub parent: usize,
    pub segment: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Topology {
    index: BTreeMap<String, usize>,
    source: usize,
    order: Vec<usize>,
    feed: Vec<Option<Feed>>,
    children: Vec<Vec<usize>>,
    /// Downstream bus of each segment.
    seg_child: Vec<usize>,
    seg_phases: Vec<PhaseSet>,
    /// Total segment impedance in ohms, indexed by phase (zeros off-phase).
    seg_z: Vec<[[Complex64; 3]; 3]>,
    seg_reg: Vec<[Option<usize>; 3]>,
    load_idx: Vec<usize>,
    pv_idx: Vec<usize>,
}

/// Validated, immutable feeder.
#[derive(Debug, Clone, PartialEq)]
pub struct FeederModel {
    buses: Vec<Bus>,
    lines: Vec<LineSegment>,
    regulators: Vec<VoltageRegulatorDevice>,
    loads: Vec<LoadPoint>,
    pv: Vec<PvSystem>,
    source: Source,
    topo: Topology,
}

/// Parses and validates a feeder document.
pub fn parse_feeder(text: &str) -> Result<FeederModel> {
    let doc: FeederDocument =
        serde_json::from_str(text).map_err(|e| Error::schema(json_path_hint(&e), e.to_string()))?;
    FeederModel::from_document(doc)
}

fn json_path_hint(e: &serde_json::Error) -> String {
    format!("line {} column {}", e.line(), e.column())
}

fn finite_nonneg(v: f64) -> bool {
    v.is_finite() && v >= 0.0
}

fn finite_pos(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

impl FeederModel {
    pub fn new(
        buses: Vec<Bus>,
        lines: Vec<LineSegment>,
        regulators: Vec<VoltageRegulatorDevice>,
        loads: Vec<LoadPoint>,
        pv: Vec<PvSystem>,
        source: Source,
    ) -> Result<Self> {
        Self::from_document(FeederDocument {
            buses,
            lines,
            regulators,
            loads,
            pv,
            source,
        })
    }

    fn from_document(doc: FeederDocument) -> Result<Self> {
        let topo = validate(&doc)?;
        Ok(FeederModel {
            buses: doc.buses,
            lines: doc.lines,
            regulators: doc.regulators,
            loads: doc.loads,
            pv: doc.pv,
            source: doc.source,
            topo,
        })
    }

    pub fn to_json(&self) -> String {
        let doc = FeederDocumentRef {
            buses: &self.buses,
            lines: &self.lines,
            regulators: &self.regulators,
            loads: &self.loads,
            pv: &self.pv,
            source: &self.source,
        };
        serde_json::to_string_pretty(&doc).expect("feeder serializes")
    }

    /// SHA-256 of the canonical document; identifies the feeder across artifacts.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.to_json().as_bytes());
        hex::encode(h.finalize())
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn lines(&self) -> &[LineSegment] {
        &self.lines
    }

    pub fn regulators(&self) -> &[VoltageRegulatorDevice] {
        &self.regulators
    }

    pub fn loads(&self) -> &[LoadPoint] {
        &self.loads
    }

    pub fn pv(&self) -> &[PvSystem] {
        &self.pv
    }

    pub fn source(&self) -> &Source {
        &self.source
    }

    pub fn bus_count(&self) -> usize {
        self.buses.len()
    }

    pub fn bus_index(&self, id: &str) -> Option<usize> {
        self.topo.index.get(id).copied()
    }

    pub fn bus(&self, idx: usize) -> &Bus {
        &self.buses[idx]
    }

    pub fn source_index(&self) -> usize {
        self.topo.source
    }

    /// Buses in breadth-first order from the source.
    pub fn order(&self) -> &[usize] {
        &self.topo.order
    }

    pub fn feed(&self, bus: usize) -> Option<Feed> {
        self.topo.feed[bus]
    }

    pub fn children(&self, bus: usize) -> &[usize] {
        &self.topo.children[bus]
    }

    pub fn segment_phases(&self, seg: usize) -> PhaseSet {
        self.topo.seg_phases[seg]
    }

    pub(crate) fn segment_impedance(&self, seg: usize) -> &[[Complex64; 3]; 3] {
        &self.topo.seg_z[seg]
    }

    /// Regulator unit on a segment phase, if any.
    pub fn segment_regulator(&self, seg: usize, phase: Phase) -> Option<usize> {
        self.topo.seg_reg[seg][phase.index()]
    }

    /// Bus index of each load point, parallel to [`FeederModel::loads`].
    pub fn load_bus(&self, load: usize) -> usize {
        self.topo.load_idx[load]
    }

    pub fn pv_bus(&self, pv: usize) -> usize {
        self.topo.pv_idx[pv]
    }

    pub fn pv_node(&self, pv: usize) -> Node {
        Node::new(self.topo.pv_idx[pv], self.pv[pv].phase)
    }

    pub fn load_node(&self, load: usize) -> Node {
        Node::new(self.topo.load_idx[load], self.loads[load].phase)
    }

    pub fn regulator_index(&self, id: &str) -> Option<usize> {
        self.regulators.iter().position(|r| r.id == id)
    }

    pub fn regulator_segment(&self, reg: usize) -> usize {
        let line = &self.regulators[reg].line;
        self.lines
            .iter()
            .position(|l| &l.id == line)
            .expect("validated regulator segment")
    }

    /// Bus whose voltage on the regulator's phase is the regulated secondary voltage.
    pub fn regulator_secondary_bus(&self, reg: usize) -> usize {
        self.topo.seg_child[self.regulator_segment(reg)]
    }

    pub fn initial_taps(&self) -> Vec<i32> {
        self.regulators.iter().map(|r| r.tap).collect()
    }

    /// Every (bus, phase) present on the feeder, ordered by bus index then phase.
    pub fn nodes(&self) -> Vec<Node> {
        self.buses
            .iter()
            .enumerate()
            .flat_map(|(i, b)| b.phases.iter().map(move |p| Node::new(i, p)))
            .collect()
    }

    /// Nodes hosting at least one load or PV system on `phase`, in ascending bus index.
    pub fn load_nodes(&self, phase: Phase) -> Vec<Node> {
        let mut set = BTreeSet::new();
        for (i, l) in self.loads.iter().enumerate() {
            if l.phase == phase {
                set.insert(self.topo.load_idx[i]);
            }
        }
        for (i, p) in self.pv.iter().enumerate() {
            if p.phase == phase {
                set.insert(self.topo.pv_idx[i]);
            }
        }
        set.into_iter().map(|b| Node::new(b, phase)).collect()
    }

    pub fn node_label(&self, node: Node) -> String {
        format!("{}.{}", self.buses[node.bus].id, node.phase)
    }

    pub fn parse_node_label(&self, label: &str) -> Result<Node> {
        let (bus, phase) = label
            .rsplit_once('.')
            .ok_or_else(|| Error::Data(format!("malformed node label `{label}`")))?;
        let bus = self.bus_index(bus).ok_or(Error::DanglingReference {
            kind: "bus",
            id: bus.to_string(),
        })?;
        let phase: Phase = phase.parse().map_err(Error::Data)?;
        if !self.buses[bus].phases.contains(phase) {
            return Err(Error::Data(format!("bus of `{label}` does not carry phase {phase}")));
        }
        Ok(Node::new(bus, phase))
    }

    /// Buses in the regulation zone of a regulator: the subtree fed through its
    /// segment on its phase, stopping at nested regulators on the same phase.
    pub fn downstream_nodes(&self, reg: usize) -> Vec<usize> {
        let phase = self.regulators[reg].phase;
        let start = self.regulator_secondary_bus(reg);
        let mut zone = Vec::new();
        let mut stack = vec![start];
        while let Some(b) = stack.pop() {
            zone.push(b);
            for &c in &self.topo.children[b] {
                if !self.buses[c].phases.contains(phase) {
                    continue;
                }
                let seg = self.topo.feed[c].expect("child has feed").segment;
                if self.topo.seg_reg[seg][phase.index()].is_some() {
                    continue;
                }
                stack.push(c);
            }
        }
        zone.sort_unstable();
        zone
    }

    /// Distinct regulator sites (segments carrying at least one unit).
    pub fn regulator_sites(&self) -> Vec<(String, RegulatorKind)> {
        let mut sites: Vec<(String, RegulatorKind)> = Vec::new();
        for r in &self.regulators {
            if !sites.iter().any(|(l, _)| l == &r.line) {
                sites.push((r.line.clone(), r.kind));
            }
        }
        sites
    }

    /// Distance from the source along the tree, km.
    pub fn distance_km(&self, bus: usize) -> f64 {
        let mut d = 0.0;
        let mut b = bus;
        while let Some(f) = self.topo.feed[b] {
            d += self.lines[f.segment].length_km;
            b = f.parent;
        }
        d
    }

    /// Regulators on the path from the source to `bus` (inclusive of its own
    /// feeding segment), upstream first.
    pub fn upstream_regulators(&self, bus: usize) -> Vec<usize> {
        let mut regs = Vec::new();
        let mut b = bus;
        while let Some(f) = self.topo.feed[b] {
            for p in Phase::ALL {
                if let Some(r) = self.topo.seg_reg[f.segment][p.index()] {
                    regs.push(r);
                }
            }
            b = f.parent;
        }
        regs.reverse();
        regs
    }
}

impl fmt::Display for FeederModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} buses, {} lines, {} regulator units, {} loads, {} PV",
            self.buses.len(),
            self.lines.len(),
            self.regulators.len(),
            self.loads.len(),
            self.pv.len()
        )
    }
}

fn validate(doc: &FeederDocument) -> Result<Topology> {
    let mut index = BTreeMap::new();
    for (i, b) in doc.buses.iter().enumerate() {
        if b.id.is_empty() {
            return Err(Error::schema(format!("buses[{i}].id"), "empty id"));
        }
        if index.insert(b.id.clone(), i).is_some() {
            return Err(Error::schema(
                format!("buses[{i}].id"),
                format!("duplicate bus id `{}`", b.id),
            ));
        }
        if b.phases.is_empty() {
            return Err(Error::schema(format!("buses[{i}].phases"), "no phases"));
        }
        if !finite_pos(b.base_kv) {
            return Err(Error::schema(format!("buses[{i}].base_kv"), "must be > 0"));
        }
    }
    let lookup = |id: &str| -> Result<usize> {
        index.get(id).copied().ok_or_else(|| Error::DanglingReference {
            kind: "bus",
            id: id.to_string(),
        })
    };
    let source = lookup(&doc.source.bus)?;
    if !finite_pos(doc.source.voltage_pu) {
        return Err(Error::schema("source.voltage_pu", "must be > 0"));
    }
    if !finite_pos(doc.source.nominal_kv) {
        return Err(Error::schema("source.nominal_kv", "must be > 0"));
    }

    let n = doc.buses.len();
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    let mut seg_ids = BTreeSet::new();
    let mut seg_phases = Vec::with_capacity(doc.lines.len());
    let mut seg_z = Vec::with_capacity(doc.lines.len());
    for (s, l) in doc.lines.iter().enumerate() {
        let field = |f: &str| format!("lines[{s}].{f}");
        if !seg_ids.insert(l.id.as_str()) {
            return Err(Error::schema(field("id"), format!("duplicate line id `{}`", l.id)));
        }
        let a = lookup(&l.from)?;
        let b = lookup(&l.to)?;
        if a == b {
            return Err(Error::Cycle {
                cycle: vec![l.from.clone(), l.to.clone()],
            });
        }
        if !finite_nonneg(l.length_km) {
            return Err(Error::schema(field("length_km"), "must be >= 0"));
        }
        let (ba, bb) = (&doc.buses[a], &doc.buses[b]);
        if (ba.base_kv - bb.base_kv).abs() > 1e-9 * ba.base_kv {
            return Err(Error::schema(
                field("to"),
                "endpoints have different base_kv (transformers are not modelled)",
            ));
        }
        let phases = ba.phases.intersect(bb.phases);
        if phases.is_empty() {
            return Err(Error::schema(field("z"), "endpoints share no phase"));
        }
        let dim = phases.len();
        if l.z.len() != dim || l.z.iter().any(|row| row.len() != dim) {
            return Err(Error::schema(
                field("z"),
                format!("expected a {dim}x{dim} matrix for phases `{phases}`"),
            ));
        }
        let mut z = [[Complex64::new(0.0, 0.0); 3]; 3];
        let ph: Vec<Phase> = phases.iter().collect();
        for (i, row) in l.z.iter().enumerate() {
            for (j, &[r, x]) in row.iter().enumerate() {
                if !r.is_finite() || !x.is_finite() {
                    return Err(Error::schema(field("z"), "non-finite entry"));
                }
                if i == j && r < 0.0 {
                    return Err(Error::schema(field("z"), "negative self resistance"));
                }
                z[ph[i].index()][ph[j].index()] = Complex64::new(r, x) * l.length_km;
            }
        }
        seg_phases.push(phases);
        seg_z.push(z);
        adj[a].push((b, s));
        adj[b].push((a, s));
    }

    // Breadth-first orientation from the source; any revisit is a cycle.
    let mut feed: Vec<Option<Feed>> = vec![None; n];
    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut children = vec![Vec::new(); n];
    let mut seg_child = vec![usize::MAX; doc.lines.len()];
    let mut used = vec![false; doc.lines.len()];
    let mut queue = VecDeque::from([source]);
    seen[source] = true;
    while let Some(u) = queue.pop_front() {
        order.push(u);
        for &(v, s) in &adj[u] {
            if used[s] {
                continue;
            }
            used[s] = true;
            if seen[v] {
                return Err(Error::Cycle {
                    cycle: cycle_path(doc, &feed, u, v),
                });
            }
            seen[v] = true;
            feed[v] = Some(Feed { parent: u, segment: s });
            children[u].push(v);
            seg_child[s] = v;
            queue.push_back(v);
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::Unreachable(doc.buses[i].id.clone()));
    }
    for (b, f) in feed.iter().enumerate() {
        if let Some(f) = f {
            if !doc.buses[b].phases.is_subset(seg_phases[f.segment]) {
                return Err(Error::schema(
                    format!("buses[{b}].phases"),
                    format!(
                        "bus `{}` carries phases `{}` but its feeding line only `{}`",
                        doc.buses[b].id, doc.buses[b].phases, seg_phases[f.segment]
                    ),
                ));
            }
        }
    }

    let mut seg_reg = vec![[None; 3]; doc.lines.len()];
    let mut reg_ids = BTreeSet::new();
    for (r, reg) in doc.regulators.iter().enumerate() {
        let field = |f: &str| format!("regulators[{r}].{f}");
        if !reg_ids.insert(reg.id.as_str()) {
            return Err(Error::schema(
                field("id"),
                format!("duplicate regulator id `{}`", reg.id),
            ));
        }
        let s = doc
            .lines
            .iter()
            .position(|l| l.id == reg.line)
            .ok_or_else(|| Error::DanglingReference {
                kind: "line",
                id: reg.line.clone(),
            })?;
        if !seg_phases[s].contains(reg.phase) {
            return Err(Error::schema(
                field("phase"),
                format!("line `{}` lacks phase {}", reg.line, reg.phase),
            ));
        }
        if reg.tap.abs() > TAP_LIMIT {
            return Err(Error::schema(
                field("tap"),
                format!("outside [-{TAP_LIMIT}, {TAP_LIMIT}]"),
            ));
        }
        if !finite_pos(reg.step_pu) {
            return Err(Error::schema(field("step_pu"), "must be > 0"));
        }
        if !finite_pos(reg.v_set) {
            return Err(Error::schema(field("v_set"), "must be > 0"));
        }
        if !finite_pos(reg.deadband) {
            return Err(Error::schema(field("deadband"), "must be > 0"));
        }
        if !finite_pos(reg.time_delay) {
            return Err(Error::schema(field("time_delay"), "must be > 0"));
        }
        let slot = &mut seg_reg[s][reg.phase.index()];
        if slot.is_some() {
            return Err(Error::schema(
                field("line"),
                format!("second regulator on line `{}` phase {}", reg.line, reg.phase),
            ));
        }
        *slot = Some(r);
    }

    let mut load_idx = Vec::with_capacity(doc.loads.len());
    for (i, l) in doc.loads.iter().enumerate() {
        let b = lookup(&l.bus)?;
        if !doc.buses[b].phases.contains(l.phase) {
            return Err(Error::schema(
                format!("loads[{i}].phase"),
                format!("bus `{}` lacks phase {}", l.bus, l.phase),
            ));
        }
        if !finite_nonneg(l.peak_kw) {
            return Err(Error::schema(format!("loads[{i}].peak_kw"), "must be >= 0"));
        }
        if let Some(pf) = l.power_factor {
            if !(pf > 0.0 && pf <= 1.0) {
                return Err(Error::schema(format!("loads[{i}].power_factor"), "must be in (0, 1]"));
            }
        }
        load_idx.push(b);
    }
    let mut pv_idx = Vec::with_capacity(doc.pv.len());
    let mut pv_ids = BTreeSet::new();
    for (i, p) in doc.pv.iter().enumerate() {
        if !pv_ids.insert(p.id.as_str()) {
            return Err(Error::schema(
                format!("pv[{i}].id"),
                format!("duplicate PV id `{}`", p.id),
            ));
        }
        let b = lookup(&p.bus)?;
        if !doc.buses[b].phases.contains(p.phase) {
            return Err(Error::schema(
                format!("pv[{i}].phase"),
                format!("bus `{}` lacks phase {}", p.bus, p.phase),
            ));
        }
        if !finite_pos(p.rated_kw) {
            return Err(Error::schema(format!("pv[{i}].rated_kw"), "must be > 0"));
        }
        if !(p.oversize.is_finite() && p.oversize >= 1.0) {
            return Err(Error::schema(format!("pv[{i}].oversize"), "must be >= 1"));
        }
        pv_idx.push(b);
    }

    Ok(Topology {
        index,
        source,
        order,
        feed,
        children,
        seg_child,
        seg_phases,
        seg_z,
        seg_reg,
        load_idx,
        pv_idx,
    })
}

/// Bus ids around the cycle closed by the edge (u, v).
fn cycle_path(doc: &FeederDocument, feed: &[Option<Feed>], u: usize, v: usize) -> Vec<String> {
    let ancestors = |mut b: usize| {
        let mut path = vec![b];
        while let Some(f) = feed[b] {
            b = f.parent;
            path.push(b);
        }
        path
    };
    let pu = ancestors(u);
    let pv = ancestors(v);
    let common = pu.iter().find(|b| pv.contains(b)).copied().unwrap_or(u);
    let mut cycle: Vec<usize> = pu.iter().copied().take_while(|&b| b != common).collect();
    cycle.push(common);
    let mut tail: Vec<usize> = pv.iter().copied().take_while(|&b| b != common).collect();
    tail.reverse();
    cycle.extend(tail);
    cycle.push(u);
    cycle.into_iter().map(|b| doc.buses[b].id.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_bus() -> &'static str {
        r#"{
          "buses": [
            {"id": "s", "phases": "a", "base_kv": 7.2},
            {"id": "l", "phases": "a", "base_kv": 7.2}
          ],
          "lines": [{"id": "s-l", "from": "s", "to": "l", "length_km": 1.0, "z": [[[0.3, 0.6]]]}],
          "loads": [{"bus": "l", "phase": "a", "peak_kw": 10.0}],
          "source": {"bus": "s", "nominal_kv": 12.47}
        }"#
    }

    #[test]
    fn minimal_tree_parses() {
        let f = parse_feeder(two_bus()).unwrap();
        assert_eq!(f.bus_count(), 2);
        let l = f.bus_index("l").unwrap();
        assert_eq!(f.feed(l).unwrap().parent, f.source_index());
        assert!(f.children(l).is_empty());
        assert_eq!(f.distance_km(l), 1.0);
    }

    #[test]
    fn loop_is_rejected_with_cycle() {
        let text = r#"{
          "buses": [
            {"id": "s", "phases": "a", "base_kv": 7.2},
            {"id": "x", "phases": "a", "base_kv": 7.2},
            {"id": "y", "phases": "a", "base_kv": 7.2}
          ],
          "lines": [
            {"id": "1", "from": "s", "to": "x", "length_km": 1.0, "z": [[[0.3, 0.6]]]},
            {"id": "2", "from": "x", "to": "y", "length_km": 1.0, "z": [[[0.3, 0.6]]]},
            {"id": "3", "from": "y", "to": "s", "length_km": 1.0, "z": [[[0.3, 0.6]]]}
          ],
          "source": {"bus": "s", "nominal_kv": 12.47}
        }"#;
        match parse_feeder(text) {
            Err(Error::Cycle { cycle }) => {
                assert!(cycle.contains(&"x".to_string()) && cycle.contains(&"y".to_string()));
            }
            other => panic!("expected cycle, got {other:?}"),
        }
    }

    #[test]
    fn dangling_bus_is_named() {
        let text = two_bus().replace(r#""bus": "l", "phase""#, r#""bus": "zz", "phase""#);
        match parse_feeder(&text) {
            Err(Error::DanglingReference { id, .. }) => assert_eq!(id, "zz"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn schema_violation_names_field() {
        let text = two_bus().replace(r#""peak_kw": 10.0"#, r#""peak_kw": 10.0, "colour": 1"#);
        let err = parse_feeder(&text).unwrap_err();
        assert!(err.to_string().contains("colour"), "{err}");
        let text = two_bus().replace("[[[0.3, 0.6]]]", "[[[0.3, 0.6], [0.1, 0.1]]]");
        let err = parse_feeder(&text).unwrap_err();
        assert!(err.to_string().contains("lines[0].z"), "{err}");
    }

    #[test]
    fn unreachable_bus_is_reported() {
        let text = two_bus().replace(
            r#"{"id": "l", "phases": "a", "base_kv": 7.2}"#,
            r#"{"id": "l", "phases": "a", "base_kv": 7.2}, {"id": "island", "phases": "a", "base_kv": 7.2}"#,
        );
        assert!(matches!(parse_feeder(&text), Err(Error::Unreachable(id)) if id == "island"));
    }

    #[test]
    fn pv_capability_endpoints() {
        let pv = PvSystem {
            id: "p".into(),
            bus: "l".into(),
            phase: Phase::A,
            rated_kw: 5.0,
            oversize: DEFAULT_OVERSIZE,
            profile: None,
        };
        let kva = pv.inverter_kva();
        assert_eq!(pv.reactive_capability(kva), 0.0);
        assert_eq!(pv.reactive_capability(0.0), kva);
        assert_eq!(pv.reactive_capability(2.0 * kva), 0.0);
    }

    #[test]
    fn tap_ratio_arithmetic() {
        assert_eq!(tap_ratio(8, DEFAULT_TAP_STEP), 1.05);
        assert_eq!(16.0 * DEFAULT_TAP_STEP, 0.10);
        assert_eq!(tap_ratio(16, DEFAULT_TAP_STEP), 1.10);
        assert_eq!(tap_ratio(-16, DEFAULT_TAP_STEP), 0.90);
    }
}
