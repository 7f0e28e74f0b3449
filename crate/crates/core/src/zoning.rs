//! Zone partitions: per-phase inverter zones grown by fast incremental
//! clustering on the sensitivity correlation, and one regulator zone per
//! regulator unit.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::feeder::{FeederModel, Node};
use crate::phase::Phase;
use crate::sensitivity::CorrelationMatrix;

pub const DEFAULT_ALPHA: f64 = 0.96;

#[derive(Debug, Clone, PartialEq)]
pub struct IbrZone {
    /// Zero-based position among the zones of its phase.
    pub index: usize,
    pub phase: Phase,
    pub members: Vec<Node>,
    pub critical: Vec<Node>,
}

impl IbrZone {
    /// Display label, e.g. `a1` for the first zone on phase a.
    pub fn label(&self) -> String {
        format!("{}{}", self.phase, self.index + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VrZone {
    pub device: usize,
    pub phase: Phase,
    /// Buses regulated by the device.
    pub buses: Vec<usize>,
    /// Metered nodes of the zone: its load nodes, or every node on the
    /// device's phase when it has none.
    pub members: Vec<Node>,
    pub critical: Vec<Node>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZonePartition {
    pub alpha: f64,
    pub ibr: BTreeMap<Phase, Vec<IbrZone>>,
    pub vr: Vec<VrZone>,
}

impl ZonePartition {
    pub fn ibr_zones(&self) -> impl Iterator<Item = &IbrZone> {
        self.ibr.values().flatten()
    }

    pub fn zone_count(&self) -> usize {
        self.ibr.values().map(Vec::len).sum()
    }

    /// Inverter zone containing `node`.
    pub fn ibr_zone_of(&self, node: Node) -> Option<&IbrZone> {
        self.ibr
            .get(&node.phase)?
            .iter()
            .find(|z| z.members.binary_search(&node).is_ok())
    }
}

/// Mean correlation of node `l` with the members of a zone (indices into `c`).
pub fn mean_correlation(l: usize, members: &[usize], c: &DMatrix<f64>) -> f64 {
    members.iter().map(|&v| c[(l, v)]).sum::<f64>() / members.len() as f64
}

/// Clusters the indices `0..n` of one correlation matrix: index 0 seeds the
/// first zone, every later index joins the zone with the highest mean
/// correlation when that mean reaches `alpha`, otherwise opens a new zone.
/// Ties go to the lowest zone index.
pub fn fic_indices(c: &DMatrix<f64>, alpha: f64) -> Vec<Vec<usize>> {
    let n = c.nrows();
    let mut zones: Vec<Vec<usize>> = Vec::new();
    for l in 0..n {
        let mut best: Option<(usize, f64)> = None;
        for (k, zone) in zones.iter().enumerate() {
            let mcc = mean_correlation(l, zone, c);
            if best.is_none_or(|(_, b)| mcc > b) {
                best = Some((k, mcc));
            }
        }
        match best {
            Some((k, mcc)) if mcc >= alpha => zones[k].push(l),
            _ => zones.push(vec![l]),
        }
    }
    zones
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("alpha must lie in (0, 1], got {alpha}")))
    }
}

/// Per-phase zones over the load nodes covered by the correlation matrix.
pub fn fic_cluster(corr: &CorrelationMatrix, alpha: f64) -> Result<BTreeMap<Phase, Vec<IbrZone>>> {
    check_alpha(alpha)?;
    let mut out = BTreeMap::new();
    for (&phase, pc) in &corr.phases {
        let zones = fic_indices(&pc.coefficients, alpha)
            .into_iter()
            .enumerate()
            .map(|(index, idx)| {
                let mut members: Vec<Node> = idx.into_iter().map(|i| pc.nodes[i]).collect();
                members.sort_unstable();
                IbrZone {
                    index,
                    phase,
                    members,
                    critical: Vec::new(),
                }
            })
            .collect();
        out.insert(phase, zones);
    }
    Ok(out)
}

/// Regulator zones, one per unit, in regulator order.
pub fn vr_zones(feeder: &FeederModel) -> Vec<VrZone> {
    (0..feeder.regulators().len())
        .map(|r| {
            let phase = feeder.regulators()[r].phase;
            let buses = feeder.downstream_nodes(r);
            let load_nodes = feeder.load_nodes(phase);
            let mut members: Vec<Node> = buses
                .iter()
                .map(|&b| Node::new(b, phase))
                .filter(|n| load_nodes.binary_search(n).is_ok())
                .collect();
            if members.is_empty() {
                members = buses.iter().map(|&b| Node::new(b, phase)).collect();
            }
            VrZone {
                device: r,
                phase,
                buses,
                members,
                critical: Vec::new(),
            }
        })
        .collect()
}

pub fn partition(feeder: &FeederModel, corr: &CorrelationMatrix, alpha: f64) -> Result<ZonePartition> {
    for (&phase, pc) in &corr.phases {
        if pc.nodes != feeder.load_nodes(phase) {
            return Err(Error::Stale(format!(
                "correlation matrix for phase {phase} does not match the feeder's load nodes"
            )));
        }
    }
    Ok(ZonePartition {
        alpha,
        ibr: fic_cluster(corr, alpha)?,
        vr: vr_zones(feeder),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: &[&[f64]]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), rows.len(), |i, j| rows[i][j])
    }

    #[test]
    fn mean_of_members() {
        let c = matrix(&[&[1.0, 0.8, 1.0], &[0.8, 1.0, 0.5], &[1.0, 0.5, 1.0]]);
        assert_eq!(mean_correlation(0, &[1], &c), 0.8);
        assert!((mean_correlation(0, &[1, 2], &c) - 0.9).abs() < 1e-15);
    }

    #[test]
    fn hand_run_of_clustering() {
        // 0 seeds zone 0; 1 joins (0.97); 2 opens zone 1 (mean 0.5);
        // 3 joins zone 1 (0.98 vs 0.6); 4 joins zone 0 ((0.96+0.97)/2 = 0.965).
        let c = matrix(&[
            &[1.0, 0.97, 0.5, 0.6, 0.96],
            &[0.97, 1.0, 0.5, 0.6, 0.97],
            &[0.5, 0.5, 1.0, 0.98, 0.4],
            &[0.6, 0.6, 0.98, 1.0, 0.5],
            &[0.96, 0.97, 0.4, 0.5, 1.0],
        ]);
        assert_eq!(fic_indices(&c, 0.96), vec![vec![0, 1, 4], vec![2, 3]]);
        assert_eq!(fic_indices(&c, 0.3).len(), 1);
        assert_eq!(fic_indices(&c, 1.0).len(), 5);
    }

    #[test]
    fn tie_goes_to_lowest_zone() {
        let c = matrix(&[&[1.0, 0.0, 0.9], &[0.0, 1.0, 0.9], &[0.9, 0.9, 1.0]]);
        assert_eq!(fic_indices(&c, 0.5), vec![vec![0, 2], vec![1]]);
    }
}
