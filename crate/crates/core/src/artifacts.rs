//! On-disk documents exchanged between pipeline stages.
//!
//! Structured outputs are JSON documents carrying a [`Manifest`]; matrices,
//! logs and traces are CSV files with header rows whose content hashes are
//! listed in the manifest of the document that references them. A consumer
//! refuses a document whose feeder hash or referenced file hashes no longer
//! match.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::critical::{occurrence_percent, CriticalNodeSet, Thresholds, ZoneCritical, ZoneKey};
use crate::error::{Error, Result};
use crate::feeder::{FeederModel, Node};
use crate::phase::Phase;
use crate::powerflow::NodalVoltageState;
use crate::sensitivity::{CorrelationMatrix, CorrelationMode, PhaseCorrelation, PhaseMatrix, VlsmQ};
use crate::sim::{IbrLogEntry, MetricsReport, TraceRow, VrLogEntry};
use crate::zoning::{IbrZone, VrZone, ZonePartition};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of a value's JSON encoding.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    sha256_hex(&serde_json::to_vec(value).expect("config serializes"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputRef {
    pub path: String,
    pub hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub stage: String,
    pub tool_version: String,
    pub feeder_hash: String,
    pub config_hash: String,
    pub seed: Option<u64>,
    /// Inputs by role.
    pub inputs: BTreeMap<String, InputRef>,
    /// Companion file name to content hash.
    pub outputs: BTreeMap<String, String>,
    /// Hash over every other field.
    pub hash: String,
}

impl Manifest {
    pub fn new(stage: &str, feeder: &FeederModel, config_hash: String, seed: Option<u64>) -> Self {
        Manifest {
            stage: stage.to_string(),
            tool_version: TOOL_VERSION.to_string(),
            feeder_hash: feeder.content_hash(),
            config_hash,
            seed,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            hash: String::new(),
        }
    }

    pub fn input(mut self, role: &str, path: impl Into<String>, hash: impl Into<String>) -> Self {
        self.inputs.insert(
            role.to_string(),
            InputRef {
                path: path.into(),
                hash: hash.into(),
            },
        );
        self
    }

    /// Refuses a document whose recorded `role` input is not `hash`.
    pub fn check_input(&self, role: &str, hash: &str) -> Result<()> {
        match self.inputs.get(role) {
            Some(r) if r.hash == hash => Ok(()),
            Some(r) => Err(Error::Stale(format!(
                "{} output was built from {role} {} ({}), which has since changed to {}; rerun `{}`",
                self.stage,
                r.path,
                short(&r.hash),
                short(hash),
                self.stage
            ))),
            None => Err(Error::Stale(format!(
                "{} manifest does not record its {role} input",
                self.stage
            ))),
        }
    }

    pub fn output(mut self, name: impl Into<String>, bytes: &[u8]) -> Self {
        self.outputs.insert(name.into(), sha256_hex(bytes));
        self
    }

    fn digest(&self) -> String {
        let mut m = self.clone();
        m.hash.clear();
        config_hash(&m)
    }

    pub fn seal(mut self) -> Self {
        self.hash = self.digest();
        self
    }

    /// Refuses a manifest edited after it was sealed.
    pub fn check_seal(&self) -> Result<()> {
        if self.hash != self.digest() {
            return Err(Error::Stale(format!(
                "{} manifest hash does not match its contents",
                self.stage
            )));
        }
        Ok(())
    }

    /// Refuses tampered manifests and documents built for another feeder.
    pub fn check(&self, feeder: &FeederModel) -> Result<()> {
        self.check_seal()?;
        let current = feeder.content_hash();
        if self.feeder_hash != current {
            return Err(Error::Stale(format!(
                "{} output was produced for feeder {} but the current feeder hashes to {}; rerun `{}`",
                self.stage,
                short(&self.feeder_hash),
                short(&current),
                self.stage
            )));
        }
        Ok(())
    }

    /// Refuses a companion file whose content changed since it was written.
    pub fn check_output(&self, name: &str, bytes: &[u8]) -> Result<()> {
        let expected = self
            .outputs
            .get(name)
            .ok_or_else(|| Error::Stale(format!("{} manifest does not list `{name}`", self.stage)))?;
        let actual = sha256_hex(bytes);
        if *expected != actual {
            return Err(Error::Stale(format!(
                "`{name}` hashes to {} but the {} manifest recorded {}",
                short(&actual),
                self.stage,
                short(expected)
            )));
        }
        Ok(())
    }
}

fn short(h: &str) -> &str {
    &h[..h.len().min(12)]
}

pub fn to_json<T: Serialize>(doc: &T) -> String {
    let mut s = serde_json::to_string_pretty(doc).expect("document serializes");
    s.push('\n');
    s
}

pub fn from_json<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Data(format!("malformed document: {e}")))
}

/// Writes per-phase square matrices as one CSV: header `node` plus every node
/// label, phases in order, cross-phase cells empty.
pub fn write_matrix_csv<W: Write>(
    feeder: &FeederModel,
    blocks: &BTreeMap<Phase, (&[Node], &DMatrix<f64>)>,
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let all: Vec<Node> = blocks.values().flat_map(|(n, _)| n.iter().copied()).collect();
    let mut header = vec!["node".to_string()];
    header.extend(all.iter().map(|&n| feeder.node_label(n)));
    w.write_record(&header)?;
    for (nodes, m) in blocks.values() {
        for (i, &row) in nodes.iter().enumerate() {
            let mut rec = vec![feeder.node_label(row)];
            for &col in &all {
                rec.push(match nodes.binary_search(&col) {
                    Ok(j) => m[(i, j)].to_string(),
                    Err(_) => String::new(),
                });
            }
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_csv<R: Read>(feeder: &FeederModel, reader: R) -> Result<BTreeMap<Phase, (Vec<Node>, DMatrix<f64>)>> {
    let mut r = csv::Reader::from_reader(reader);
    let header = r.headers()?.clone();
    if header.get(0) != Some("node") {
        return Err(Error::Data("matrix CSV must start with a `node` column".into()));
    }
    let cols: Vec<Node> = header
        .iter()
        .skip(1)
        .map(|l| feeder.parse_node_label(l))
        .collect::<Result<_>>()?;
    let mut rows: Vec<(Node, Vec<Option<f64>>)> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let node = feeder.parse_node_label(rec.get(0).unwrap_or(""))?;
        let vals = rec
            .iter()
            .skip(1)
            .map(|c| {
                if c.is_empty() {
                    Ok(None)
                } else {
                    c.parse::<f64>()
                        .map(Some)
                        .map_err(|_| Error::Data(format!("bad number `{c}` in row {}", feeder.node_label(node))))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != cols.len() {
            return Err(Error::Data(format!(
                "row {} has {} cells",
                feeder.node_label(node),
                vals.len()
            )));
        }
        rows.push((node, vals));
    }
    let mut out = BTreeMap::new();
    for phase in Phase::ALL {
        let idx: Vec<usize> = (0..cols.len()).filter(|&j| cols[j].phase == phase).collect();
        let prow: Vec<&(Node, Vec<Option<f64>>)> = rows.iter().filter(|(n, _)| n.phase == phase).collect();
        if idx.is_empty() && prow.is_empty() {
            continue;
        }
        let nodes: Vec<Node> = idx.iter().map(|&j| cols[j]).collect();
        if prow.iter().map(|(n, _)| *n).collect::<Vec<_>>() != nodes || !nodes.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Data(format!(
                "phase {phase} rows and columns do not list the same sorted nodes"
            )));
        }
        let mut m = DMatrix::zeros(nodes.len(), nodes.len());
        for (i, (n, vals)) in prow.iter().enumerate() {
            for (k, &j) in idx.iter().enumerate() {
                m[(i, k)] = vals[j].ok_or_else(|| {
                    Error::Data(format!(
                        "missing entry ({}, {})",
                        feeder.node_label(*n),
                        feeder.node_label(cols[j])
                    ))
                })?;
            }
        }
        out.insert(phase, (nodes, m));
    }
    Ok(out)
}

pub fn vlsm_csv(feeder: &FeederModel, vlsm: &VlsmQ) -> Result<Vec<u8>> {
    let blocks = vlsm
        .phases
        .iter()
        .map(|(&p, m)| (p, (m.nodes.as_slice(), &m.values)))
        .collect();
    let mut buf = Vec::new();
    write_matrix_csv(feeder, &blocks, &mut buf)?;
    Ok(buf)
}

pub fn correlation_csv(feeder: &FeederModel, corr: &CorrelationMatrix) -> Result<Vec<u8>> {
    let blocks = corr
        .phases
        .iter()
        .map(|(&p, c)| (p, (c.nodes.as_slice(), &c.coefficients)))
        .collect();
    let mut buf = Vec::new();
    write_matrix_csv(feeder, &blocks, &mut buf)?;
    Ok(buf)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrelationModeDoc {
    Pooled,
    ScenarioAverage,
}

impl From<CorrelationMode> for CorrelationModeDoc {
    fn from(m: CorrelationMode) -> Self {
        match m {
            CorrelationMode::Pooled => CorrelationModeDoc::Pooled,
            CorrelationMode::ScenarioAverage => CorrelationModeDoc::ScenarioAverage,
        }
    }
}

impl From<CorrelationModeDoc> for CorrelationMode {
    fn from(m: CorrelationModeDoc) -> Self {
        match m {
            CorrelationModeDoc::Pooled => CorrelationMode::Pooled,
            CorrelationModeDoc::ScenarioAverage => CorrelationMode::ScenarioAverage,
        }
    }
}

/// Index document of a sensitivity run; the matrices live in the two CSVs it names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivityDocument {
    pub manifest: Manifest,
    pub delta_q_kvar: f64,
    pub scenarios: usize,
    pub mode: CorrelationModeDoc,
    pub vlsm_csv: String,
    pub correlation_csv: String,
}

impl SensitivityDocument {
    /// Rebuilds the tables from the CSV contents after checking their hashes.
    pub fn load(
        &self,
        feeder: &FeederModel,
        vlsm_bytes: &[u8],
        corr_bytes: &[u8],
    ) -> Result<(VlsmQ, CorrelationMatrix)> {
        self.manifest.check(feeder)?;
        self.manifest.check_output(&self.vlsm_csv, vlsm_bytes)?;
        self.manifest.check_output(&self.correlation_csv, corr_bytes)?;
        let vlsm = VlsmQ {
            delta_q_kvar: self.delta_q_kvar,
            phases: read_matrix_csv(feeder, vlsm_bytes)?
                .into_iter()
                .map(|(p, (nodes, values))| (p, PhaseMatrix { nodes, values }))
                .collect(),
            scenario: None,
        };
        let correlation = CorrelationMatrix {
            sample_count: self.scenarios,
            mode: self.mode.into(),
            phases: read_matrix_csv(feeder, corr_bytes)?
                .into_iter()
                .map(|(p, (nodes, coefficients))| {
                    (
                        p,
                        PhaseCorrelation {
                            nodes,
                            coefficients,
                            means: Vec::new(),
                            std_devs: Vec::new(),
                        },
                    )
                })
                .collect(),
        };
        Ok((vlsm, correlation))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IbrZoneDoc {
    pub zone: String,
    pub phase: Phase,
    pub members: Vec<String>,
    pub inverters: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VrZoneDoc {
    pub device: String,
    pub phase: Phase,
    pub buses: Vec<String>,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionDocument {
    pub manifest: Manifest,
    pub alpha: f64,
    pub ibr_zones: Vec<IbrZoneDoc>,
    pub vr_zones: Vec<VrZoneDoc>,
}

fn labels(feeder: &FeederModel, nodes: &[Node]) -> Vec<String> {
    nodes.iter().map(|&n| feeder.node_label(n)).collect()
}

fn parse_labels(feeder: &FeederModel, labels: &[String]) -> Result<Vec<Node>> {
    let mut v: Vec<Node> = labels
        .iter()
        .map(|l| feeder.parse_node_label(l))
        .collect::<Result<_>>()?;
    v.sort_unstable();
    Ok(v)
}

impl PartitionDocument {
    pub fn new(feeder: &FeederModel, partition: &ZonePartition, manifest: Manifest) -> Self {
        let ibr_zones = partition
            .ibr_zones()
            .map(|z| IbrZoneDoc {
                zone: z.label(),
                phase: z.phase,
                members: labels(feeder, &z.members),
                inverters: feeder
                    .pv()
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| z.members.binary_search(&feeder.pv_node(i)).is_ok())
                    .map(|(_, p)| p.id.clone())
                    .collect(),
            })
            .collect();
        let vr_zones = partition
            .vr
            .iter()
            .map(|z| VrZoneDoc {
                device: feeder.regulators()[z.device].id.clone(),
                phase: z.phase,
                buses: z.buses.iter().map(|&b| feeder.bus(b).id.clone()).collect(),
                members: labels(feeder, &z.members),
            })
            .collect();
        PartitionDocument {
            manifest,
            alpha: partition.alpha,
            ibr_zones,
            vr_zones,
        }
    }

    pub fn to_partition(&self, feeder: &FeederModel) -> Result<ZonePartition> {
        self.manifest.check(feeder)?;
        let mut ibr: BTreeMap<Phase, Vec<IbrZone>> = BTreeMap::new();
        for z in &self.ibr_zones {
            let zones = ibr.entry(z.phase).or_default();
            let expected = format!("{}{}", z.phase, zones.len() + 1);
            if z.zone != expected {
                return Err(Error::Data(format!(
                    "zone `{}` is out of order (expected `{expected}`)",
                    z.zone
                )));
            }
            let members = parse_labels(feeder, &z.members)?;
            if members.iter().any(|n| n.phase != z.phase) {
                return Err(Error::Data(format!("zone `{}` mixes phases", z.zone)));
            }
            zones.push(IbrZone {
                index: zones.len(),
                phase: z.phase,
                members,
                critical: Vec::new(),
            });
        }
        let vr = self
            .vr_zones
            .iter()
            .map(|z| {
                let device = feeder.regulator_index(&z.device).ok_or(Error::DanglingReference {
                    kind: "regulator",
                    id: z.device.clone(),
                })?;
                let buses = z
                    .buses
                    .iter()
                    .map(|b| {
                        feeder.bus_index(b).ok_or(Error::DanglingReference {
                            kind: "bus",
                            id: b.clone(),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(VrZone {
                    device,
                    phase: z.phase,
                    buses,
                    members: parse_labels(feeder, &z.members)?,
                    critical: Vec::new(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ZonePartition {
            alpha: self.alpha,
            ibr,
            vr,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Occurrence {
    pub node: String,
    pub count: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticalZoneDoc {
    /// `a1`-style label for inverter zones, regulator id for regulator zones.
    pub zone: String,
    pub kind: ZoneKind,
    pub phase: Phase,
    pub x: Vec<Occurrence>,
    pub y: Vec<Occurrence>,
    pub accepted_y: Vec<String>,
    pub final_set: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZoneKind {
    Ibr,
    Vr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticalDocument {
    pub manifest: Manifest,
    pub runs: usize,
    pub th_percent: f64,
    pub delta_v_th: f64,
    pub zones: Vec<CriticalZoneDoc>,
}

impl CriticalDocument {
    pub fn new(feeder: &FeederModel, set: &CriticalNodeSet, manifest: Manifest) -> Self {
        let occ = |v: &[(Node, usize)]| {
            v.iter()
                .map(|&(n, c)| Occurrence {
                    node: feeder.node_label(n),
                    count: c,
                    percent: occurrence_percent(c, set.runs),
                })
                .collect()
        };
        let zones = set
            .zones
            .iter()
            .map(|z| {
                let (zone, kind) = match z.key {
                    ZoneKey::Ibr { phase, index } => (format!("{phase}{}", index + 1), ZoneKind::Ibr),
                    ZoneKey::Vr { device } => (feeder.regulators()[device].id.clone(), ZoneKind::Vr),
                };
                CriticalZoneDoc {
                    zone,
                    kind,
                    phase: z.phase,
                    x: occ(&z.x),
                    y: occ(&z.y),
                    accepted_y: labels(feeder, &z.accepted_y),
                    final_set: labels(feeder, &z.final_set),
                }
            })
            .collect();
        CriticalDocument {
            manifest,
            runs: set.runs,
            th_percent: set.thresholds.th_percent,
            delta_v_th: set.thresholds.delta_v_th,
            zones,
        }
    }

    pub fn to_set(&self, feeder: &FeederModel) -> Result<CriticalNodeSet> {
        self.manifest.check(feeder)?;
        let occ = |v: &[Occurrence]| -> Result<Vec<(Node, usize)>> {
            v.iter()
                .map(|o| Ok((feeder.parse_node_label(&o.node)?, o.count)))
                .collect()
        };
        let zones = self
            .zones
            .iter()
            .map(|z| {
                let key = match z.kind {
                    ZoneKind::Ibr => {
                        let index = z
                            .zone
                            .strip_prefix(z.phase.letter())
                            .and_then(|s| s.parse::<usize>().ok())
                            .filter(|&i| i >= 1)
                            .ok_or_else(|| Error::Data(format!("bad inverter zone label `{}`", z.zone)))?;
                        ZoneKey::Ibr {
                            phase: z.phase,
                            index: index - 1,
                        }
                    }
                    ZoneKind::Vr => ZoneKey::Vr {
                        device: feeder.regulator_index(&z.zone).ok_or(Error::DanglingReference {
                            kind: "regulator",
                            id: z.zone.clone(),
                        })?,
                    },
                };
                Ok(ZoneCritical {
                    key,
                    phase: z.phase,
                    x: occ(&z.x)?,
                    y: occ(&z.y)?,
                    accepted_y: z
                        .accepted_y
                        .iter()
                        .map(|l| feeder.parse_node_label(l))
                        .collect::<Result<_>>()?,
                    final_set: parse_labels(feeder, &z.final_set)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CriticalNodeSet {
            thresholds: Thresholds {
                th_percent: self.th_percent,
                delta_v_th: self.delta_v_th,
            },
            runs: self.runs,
            zones,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsDocument {
    pub manifest: Manifest,
    pub metrics: MetricsReport,
}

pub fn ibr_log_csv(log: &[IbrLogEntry]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if log.is_empty() {
        w.write_record([
            "seq",
            "time_s",
            "zone",
            "inverter",
            "node",
            "kvar_delta",
            "setpoint_kvar",
            "mode",
        ])?;
    }
    for e in log {
        w.serialize(e)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn vr_log_csv(log: &[VrLogEntry]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if log.is_empty() {
        w.write_record(["seq", "time_s", "device", "phase", "action", "tap", "v_set"])?;
    }
    for e in log {
        w.serialize(e)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn read_vr_log_csv<R: Read>(reader: R) -> Result<Vec<VrLogEntry>> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(Error::from)
}

pub fn read_ibr_log_csv<R: Read>(reader: R) -> Result<Vec<IbrLogEntry>> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(Error::from)
}

/// Per-minute trace: voltage envelope, violations, total inverter kvar and
/// one tap column per regulator.
pub fn trace_csv(feeder: &FeederModel, trace: &[TraceRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = ["minute", "v_min", "v_max", "violations", "q_total_kvar"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(feeder.regulators().iter().map(|r| format!("tap:{}", r.id)));
    w.write_record(&header)?;
    for row in trace {
        let mut rec = vec![
            row.minute.to_string(),
            row.v_min.to_string(),
            row.v_max.to_string(),
            row.violations.to_string(),
            row.q_total_kvar.to_string(),
        ];
        rec.extend(row.taps.iter().map(|t| t.to_string()));
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn read_trace_csv<R: Read>(reader: R) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_reader(reader);
    let fixed = 5;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|c| c.parse().ok())
                .ok_or_else(|| Error::Data(format!("bad trace cell in column {i}")))
        };
        let taps = (fixed..rec.len())
            .map(|i| {
                rec[i]
                    .parse()
                    .map_err(|_| Error::Data(format!("bad tap `{}`", &rec[i])))
            })
            .collect::<Result<_>>()?;
        out.push(TraceRow {
            minute: num(0)? as usize,
            v_min: num(1)?,
            v_max: num(2)?,
            violations: num(3)? as usize,
            q_total_kvar: num(4)?,
            taps,
        });
    }
    Ok(out)
}

/// Per-node magnitude (pu) and angle (degrees).
pub fn voltages_csv(feeder: &FeederModel, state: &NodalVoltageState) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["bus", "phase", "v_pu", "angle_deg"])?;
    for n in state.nodes() {
        w.write_record([
            feeder.bus(n.bus).id.clone(),
            n.phase.to_string(),
            state.magnitude(n).to_string(),
            state.angle_deg(n).to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}
