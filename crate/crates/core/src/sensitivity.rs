//! Reactive-power voltage sensitivities by perturbation, and the Pearson
//! correlation between sensitivity columns used for zoning.

use std::collections::BTreeMap;

use log::warn;
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::feeder::{FeederModel, Node};
use crate::phase::Phase;
use crate::powerflow::{solve, InjectionSet};
use crate::scenario::{check_source, draw_rng, ScenarioSource, Stream};
use crate::vr::settle_taps;

/// Default reactive perturbation. The dominant accuracy knob of the study.
pub const DEFAULT_DELTA_Q_KVAR: f64 = 10.0;

/// Square matrix over the load nodes of one phase, rows and columns in the
/// order of `nodes`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseMatrix {
    pub nodes: Vec<Node>,
    pub values: DMatrix<f64>,
}

impl PhaseMatrix {
    pub fn position(&self, node: Node) -> Option<usize> {
        self.nodes.binary_search(&node).ok()
    }

    pub fn get(&self, row: Node, col: Node) -> Option<f64> {
        Some(self.values[(self.position(row)?, self.position(col)?)])
    }

    pub fn dim(&self) -> usize {
        self.nodes.len()
    }
}

/// Voltage-load sensitivity with respect to reactive injection, pu/kvar:
/// entry (i, j) is the magnitude change at node i per kvar injected at node j.
#[derive(Debug, Clone, PartialEq)]
pub struct VlsmQ {
    pub delta_q_kvar: f64,
    pub phases: BTreeMap<Phase, PhaseMatrix>,
    /// Injections the matrix was linearized at; `None` for averaged tables.
    pub scenario: Option<InjectionSet>,
}

impl VlsmQ {
    pub fn phase(&self, phase: Phase) -> Option<&PhaseMatrix> {
        self.phases.get(&phase)
    }

    /// Self-sensitivity q_rr.
    pub fn diagonal(&self, node: Node) -> Option<f64> {
        self.phases.get(&node.phase)?.get(node, node)
    }
}

#[cfg(feature = "parallel")]
pub(crate) fn par_map<T: Send, F: Fn(usize) -> T + Sync + Send>(n: usize, f: F) -> Vec<T> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn par_map<T, F: Fn(usize) -> T>(n: usize, f: F) -> Vec<T> {
    (0..n).map(f).collect()
}

/// One perturbed solve per load node: reactive injection of `delta_q_kvar`
/// at node j with everything else, taps included, held fixed.
pub fn compute_vlsm(feeder: &FeederModel, injections: &InjectionSet, taps: &[i32], delta_q_kvar: f64) -> Result<VlsmQ> {
    if !(delta_q_kvar.is_finite() && delta_q_kvar > 0.0) {
        return Err(Error::Config(format!("delta_q must be > 0, got {delta_q_kvar}")));
    }
    let base = solve(feeder, injections, taps)?;
    let mut phases = BTreeMap::new();
    for phase in Phase::ALL {
        let nodes = feeder.load_nodes(phase);
        if nodes.is_empty() {
            continue;
        }
        let base_mag: Vec<f64> = nodes.iter().map(|&n| base.magnitude(n)).collect();
        let columns = par_map(nodes.len(), |j| -> Result<Vec<f64>> {
            let mut perturbed = injections.clone();
            perturbed.add(nodes[j], 0.0, -delta_q_kvar)?;
            let state = solve(feeder, &perturbed, taps).map_err(|e| Error::Perturbation {
                node: feeder.node_label(nodes[j]),
                source: Box::new(e),
            })?;
            Ok(nodes
                .iter()
                .zip(&base_mag)
                .map(|(&n, &v0)| (state.magnitude(n) - v0) / delta_q_kvar)
                .collect())
        });
        let n = nodes.len();
        let mut values = DMatrix::zeros(n, n);
        for (j, col) in columns.into_iter().enumerate() {
            let col = col?;
            for (i, q) in col.into_iter().enumerate() {
                if !q.is_finite() {
                    return Err(Error::InvalidSensitivity(format!(
                        "non-finite entry for node {}",
                        feeder.node_label(nodes[i])
                    )));
                }
                values[(i, j)] = q;
            }
        }
        phases.insert(phase, PhaseMatrix { nodes, values });
    }
    Ok(VlsmQ {
        delta_q_kvar,
        phases,
        scenario: Some(injections.clone()),
    })
}

/// How column statistics are aggregated across scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorrelationMode {
    /// Stack every scenario's rows and compute one Pearson coefficient per
    /// column pair over all stacked rows.
    #[default]
    Pooled,
    /// Pearson coefficient per scenario, then the arithmetic mean.
    ScenarioAverage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseCorrelation {
    pub nodes: Vec<Node>,
    pub coefficients: DMatrix<f64>,
    /// Column means and population standard deviations (pooled mode) kept for audit.
    pub means: Vec<f64>,
    pub std_devs: Vec<f64>,
}

impl PhaseCorrelation {
    pub fn position(&self, node: Node) -> Option<usize> {
        self.nodes.binary_search(&node).ok()
    }

    pub fn coefficient(&self, a: Node, b: Node) -> Option<f64> {
        Some(self.coefficients[(self.position(a)?, self.position(b)?)])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub sample_count: usize,
    pub mode: CorrelationMode,
    pub phases: BTreeMap<Phase, PhaseCorrelation>,
}

impl CorrelationMatrix {
    pub fn phase(&self, phase: Phase) -> Option<&PhaseCorrelation> {
        self.phases.get(&phase)
    }

    pub fn coefficient(&self, a: Node, b: Node) -> Option<f64> {
        if a.phase != b.phase {
            return None;
        }
        self.phases.get(&a.phase)?.coefficient(a, b)
    }
}

/// Pearson correlation between columns of `blocks` stacked vertically, with
/// population (1/n) normalization. Zero-variance columns correlate at 0 with
/// every other column; the diagonal is exactly 1.
fn pooled_pearson(blocks: &[&DMatrix<f64>]) -> (DMatrix<f64>, Vec<f64>, Vec<f64>, Vec<usize>) {
    let n = blocks[0].ncols();
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let count = rows as f64;
    let mut means = vec![0.0; n];
    for (j, mean) in means.iter_mut().enumerate() {
        let sum: f64 = blocks
            .iter()
            .flat_map(|b| b.column(j).iter().copied().collect::<Vec<_>>())
            .sum();
        *mean = sum / count;
    }
    let mut stds = vec![0.0; n];
    for (j, sd) in stds.iter_mut().enumerate() {
        let ss: f64 = blocks
            .iter()
            .flat_map(|b| b.column(j).iter().map(|x| (x - means[j]).powi(2)).collect::<Vec<_>>())
            .sum();
        *sd = (ss / count).sqrt();
    }
    let degenerate: Vec<usize> = (0..n).filter(|&j| !(stds[j] > 0.0)).collect();
    let mut c = DMatrix::identity(n, n);
    for m in 0..n {
        for k in (m + 1)..n {
            let value = if stds[m] > 0.0 && stds[k] > 0.0 {
                let mut acc = 0.0;
                for b in blocks {
                    for i in 0..b.nrows() {
                        acc += (b[(i, m)] - means[m]) / stds[m] * ((b[(i, k)] - means[k]) / stds[k]);
                    }
                }
                (acc / count).clamp(-1.0, 1.0)
            } else {
                0.0
            };
            c[(m, k)] = value;
            c[(k, m)] = value;
        }
    }
    (c, means, stds, degenerate)
}

/// Pearson correlation between the columns of one data matrix, population
/// normalization, same conventions as [`compute_correlation`].
pub fn pearson(data: &DMatrix<f64>) -> DMatrix<f64> {
    pooled_pearson(&[data]).0
}

/// Correlation matrix per phase over a set of sensitivity samples.
pub fn compute_correlation(samples: &[VlsmQ], mode: CorrelationMode) -> Result<CorrelationMatrix> {
    if samples.len() < 2 {
        return Err(Error::InvalidSensitivity(format!(
            "need at least 2 sensitivity samples, got {}",
            samples.len()
        )));
    }
    let first = &samples[0];
    for (s, sample) in samples.iter().enumerate().skip(1) {
        let same = sample.phases.len() == first.phases.len()
            && sample
                .phases
                .iter()
                .zip(&first.phases)
                .all(|((pa, a), (pb, b))| pa == pb && a.nodes == b.nodes);
        if !same {
            return Err(Error::InvalidSensitivity(format!(
                "sample {s} has different dimensions"
            )));
        }
    }
    let mut phases = BTreeMap::new();
    for (&phase, head) in &first.phases {
        let blocks: Vec<&DMatrix<f64>> = samples.iter().map(|s| &s.phases[&phase].values).collect();
        let (coefficients, means, std_devs, degenerate) = match mode {
            CorrelationMode::Pooled => pooled_pearson(&blocks),
            CorrelationMode::ScenarioAverage => {
                let n = head.dim();
                let mut sum = DMatrix::zeros(n, n);
                let mut degenerate = Vec::new();
                for b in &blocks {
                    let (c, _, _, d) = pooled_pearson(&[b]);
                    sum += c;
                    degenerate.extend(d);
                }
                let mut avg = sum / blocks.len() as f64;
                for i in 0..n {
                    avg[(i, i)] = 1.0;
                }
                degenerate.sort_unstable();
                degenerate.dedup();
                let (_, means, stds, _) = pooled_pearson(&blocks);
                (avg, means, stds, degenerate)
            }
        };
        for j in degenerate {
            warn!("phase {phase}: sensitivity column {j} has zero variance; its correlations are set to 0");
        }
        phases.insert(
            phase,
            PhaseCorrelation {
                nodes: head.nodes.clone(),
                coefficients,
                means,
                std_devs,
            },
        );
    }
    Ok(CorrelationMatrix {
        sample_count: samples.len(),
        mode,
        phases,
    })
}

/// Element-wise mean of a set of sensitivity samples.
pub fn mean_vlsm(samples: &[VlsmQ]) -> Result<VlsmQ> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidSensitivity("no sensitivity samples".into()))?;
    let mut phases = BTreeMap::new();
    for (&phase, head) in &first.phases {
        let mut sum = DMatrix::zeros(head.dim(), head.dim());
        for s in samples {
            let m = s
                .phases
                .get(&phase)
                .filter(|m| m.nodes == head.nodes)
                .ok_or_else(|| Error::InvalidSensitivity("samples have different dimensions".into()))?;
            sum += &m.values;
        }
        phases.insert(
            phase,
            PhaseMatrix {
                nodes: head.nodes.clone(),
                values: sum / samples.len() as f64,
            },
        );
    }
    Ok(VlsmQ {
        delta_q_kvar: first.delta_q_kvar,
        phases,
        scenario: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensitivityStudy {
    pub scenarios: usize,
    pub seed: u64,
    pub delta_q_kvar: f64,
    pub mode: CorrelationMode,
    /// Let regulators reach their local steady state in every scenario before
    /// linearizing.
    pub settle_regulators: bool,
}

impl Default for SensitivityStudy {
    fn default() -> Self {
        SensitivityStudy {
            scenarios: 1000,
            seed: 1,
            delta_q_kvar: DEFAULT_DELTA_Q_KVAR,
            mode: CorrelationMode::Pooled,
            settle_regulators: true,
        }
    }
}

/// Offline sensitivity tables: the scenario-averaged VLSM and the correlation
/// matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityBundle {
    pub vlsm: VlsmQ,
    pub correlation: CorrelationMatrix,
}

pub fn sensitivity_study(
    feeder: &FeederModel,
    source: &ScenarioSource<'_>,
    study: &SensitivityStudy,
) -> Result<SensitivityBundle> {
    check_source(feeder, source)?;
    let samples = par_map(study.scenarios, |i| -> Result<VlsmQ> {
        let op = source.sample(feeder, &mut draw_rng(study.seed, Stream::Sensitivity, i as u64));
        let inj = op.injections(feeder);
        let taps = if study.settle_regulators {
            settle_taps(feeder, &inj, &feeder.initial_taps())?.0
        } else {
            feeder.initial_taps()
        };
        compute_vlsm(feeder, &inj, &taps, study.delta_q_kvar)
    });
    let samples: Vec<VlsmQ> = samples.into_iter().collect::<Result<_>>()?;
    Ok(SensitivityBundle {
        vlsm: mean_vlsm(&samples)?,
        correlation: compute_correlation(&samples, study.mode)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(cols: &[&[f64]]) -> VlsmQ {
        let n = cols.len();
        let rows = cols[0].len();
        assert_eq!(rows, n);
        let values = DMatrix::from_fn(rows, n, |i, j| cols[j][i]);
        let nodes = (0..n).map(|b| Node::new(b, Phase::A)).collect();
        VlsmQ {
            delta_q_kvar: 1.0,
            phases: BTreeMap::from([(Phase::A, PhaseMatrix { nodes, values })]),
            scenario: None,
        }
    }

    #[test]
    fn identical_and_mirrored_columns() {
        let s1 = sample(&[&[1.0, 2.0, 4.0], &[1.0, 2.0, 4.0], &[5.0, 4.0, 2.0]]);
        let s2 = sample(&[&[2.0, 3.0, 1.0], &[2.0, 3.0, 1.0], &[4.0, 3.0, 5.0]]);
        let c = compute_correlation(&[s1, s2], CorrelationMode::Pooled).unwrap();
        let pc = c.phase(Phase::A).unwrap();
        assert!((pc.coefficients[(0, 1)] - 1.0).abs() < 1e-12);
        assert!((pc.coefficients[(0, 2)] + 1.0).abs() < 1e-12);
        assert_eq!(pc.coefficients[(1, 1)], 1.0);
    }

    #[test]
    fn zero_variance_column_correlates_at_zero() {
        let s1 = sample(&[&[1.0, 2.0, 4.0], &[3.0, 3.0, 3.0], &[5.0, 4.0, 2.0]]);
        let s2 = sample(&[&[2.0, 3.0, 1.0], &[3.0, 3.0, 3.0], &[4.0, 3.0, 5.0]]);
        let c = compute_correlation(&[s1, s2], CorrelationMode::Pooled).unwrap();
        let pc = c.phase(Phase::A).unwrap();
        assert_eq!(pc.coefficients[(0, 1)], 0.0);
        assert_eq!(pc.coefficients[(1, 2)], 0.0);
        assert_eq!(pc.coefficients[(1, 1)], 1.0);
    }

    #[test]
    fn too_few_or_mismatched_samples_fail() {
        let s1 = sample(&[&[1.0, 2.0], &[2.0, 1.0]]);
        assert!(compute_correlation(std::slice::from_ref(&s1), CorrelationMode::Pooled).is_err());
        let s3 = sample(&[&[1.0, 2.0, 3.0], &[2.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        assert!(compute_correlation(&[s1, s3], CorrelationMode::Pooled).is_err());
    }

    #[test]
    fn scenario_average_mode_keeps_unit_diagonal() {
        let s1 = sample(&[&[1.0, 2.0, 4.0], &[0.5, 2.5, 3.0], &[5.0, 4.0, 2.0]]);
        let s2 = sample(&[&[2.0, 3.0, 1.0], &[2.0, 3.5, 1.0], &[4.0, 3.0, 5.0]]);
        let c = compute_correlation(&[s1, s2], CorrelationMode::ScenarioAverage).unwrap();
        let pc = c.phase(Phase::A).unwrap();
        for i in 0..3 {
            assert_eq!(pc.coefficients[(i, i)], 1.0);
        }
        assert_eq!(pc.coefficients[(0, 2)], pc.coefficients[(2, 0)]);
    }
}
