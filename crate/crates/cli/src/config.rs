//! The TOML configuration document: one table per subcommand, every field
//! optional. Command-line flags override the document.

use serde::{Deserialize, Serialize};

use voltzone::critical::{DEFAULT_DELTA_V_TH, DEFAULT_THRESHOLD_PERCENT};
use voltzone::scenario::{HourWindow, MultiplierRanges};
use voltzone::sensitivity::{CorrelationMode, SensitivityStudy};
use voltzone::sim::SimulationConfig;
use voltzone::zoning::DEFAULT_ALPHA;
use voltzone::{Error, Result};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfigDocument {
    pub sensitivity: SensitivitySection,
    pub partition: PartitionSection,
    pub critical_nodes: CriticalSection,
    pub simulate: SimulationConfig,
}

impl ConfigDocument {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config document: {e}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ModeName {
    Pooled,
    ScenarioAverage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensitivitySection {
    pub scenarios: usize,
    pub seed: u64,
    pub delta_q_kvar: f64,
    pub mode: ModeName,
    pub settle_regulators: bool,
    pub load_range: (f64, f64),
    pub pv_range: (f64, f64),
}

impl Default for SensitivitySection {
    fn default() -> Self {
        let s = SensitivityStudy::default();
        let r = MultiplierRanges::default();
        SensitivitySection {
            scenarios: s.scenarios,
            seed: s.seed,
            delta_q_kvar: s.delta_q_kvar,
            mode: ModeName::Pooled,
            settle_regulators: s.settle_regulators,
            load_range: r.load,
            pv_range: r.pv,
        }
    }
}

impl SensitivitySection {
    pub fn study(&self) -> SensitivityStudy {
        SensitivityStudy {
            scenarios: self.scenarios,
            seed: self.seed,
            delta_q_kvar: self.delta_q_kvar,
            mode: match self.mode {
                ModeName::Pooled => CorrelationMode::Pooled,
                ModeName::ScenarioAverage => CorrelationMode::ScenarioAverage,
            },
            settle_regulators: self.settle_regulators,
        }
    }

    pub fn ranges(&self) -> MultiplierRanges {
        MultiplierRanges {
            load: self.load_range,
            pv: self.pv_range,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionSection {
    pub alpha: f64,
}

impl Default for PartitionSection {
    fn default() -> Self {
        PartitionSection { alpha: DEFAULT_ALPHA }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CriticalSection {
    pub runs: usize,
    pub seed: u64,
    pub th_percent: f64,
    pub delta_v_th: f64,
    pub settle_regulators: bool,
    /// Sampling window, hours of the day `[start, end)`.
    pub window_hours: (usize, usize),
}

impl Default for CriticalSection {
    fn default() -> Self {
        let w = HourWindow::default();
        CriticalSection {
            runs: 10_000,
            seed: 1,
            th_percent: DEFAULT_THRESHOLD_PERCENT,
            delta_v_th: DEFAULT_DELTA_V_TH,
            settle_regulators: true,
            window_hours: (w.start_minute / 60, w.end_minute / 60),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c = ConfigDocument::parse("").unwrap();
        assert_eq!(c.sensitivity.scenarios, 1000);
        assert_eq!(c.partition.alpha, 0.96);
        assert_eq!(c.critical_nodes.window_hours, (9, 20));
        assert_eq!(c.simulate, SimulationConfig::default());
    }

    #[test]
    fn sections_override_and_unknown_keys_fail() {
        let c = ConfigDocument::parse(
            r#"
            [sensitivity]
            scenarios = 50
            mode = "scenario-average"

            [simulate]
            mode = "local"
            tuner = { margin = 0.004 }

            [simulate.devices.oltc-a]
            time_delay = 75
            "#,
        )
        .unwrap();
        assert_eq!(c.sensitivity.scenarios, 50);
        assert_eq!(c.sensitivity.study().mode, CorrelationMode::ScenarioAverage);
        assert_eq!(c.simulate.tuner.margin, 0.004);
        assert_eq!(c.simulate.devices["oltc-a"].time_delay, Some(75.0));
        assert!(ConfigDocument::parse("[partition]\nbeta = 1").is_err());
    }

    #[test]
    fn bundled_example_parses() {
        let text = include_str!("../../../docs/study.toml");
        let c = ConfigDocument::parse(text).unwrap();
        assert_eq!(c.simulate.tuner.margin, 0.004);
        assert_eq!(c.simulate.devices.len(), 3);
        c.simulate.validate().unwrap();
    }
}
