//! Seeded load/PV snapshot sampling shared by the sensitivity study and the
//! critical-node Monte Carlo.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feeder::FeederModel;
use crate::powerflow::OperatingPoint;
use crate::profiles::ProfileLibrary;

/// Independent random streams so that different studies with the same seed
/// do not reuse draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Sensitivity,
    CriticalNodes,
    Generic,
}

impl Stream {
    fn key(self) -> u64 {
        match self {
            Stream::Sensitivity => 0x5e45_1717_0000_0001,
            Stream::CriticalNodes => 0xc217_1ca1_0000_0002,
            Stream::Generic => 0x9e37_79b9_7f4a_7c15,
        }
    }
}

/// Generator for draw `index` of `stream`; draws are independent of the order
/// in which they are taken, which keeps parallel runs reproducible.
pub fn draw_rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stream.key());
    rng.set_stream(index);
    rng
}

/// Half-open minute-of-day window, `[start_minute, end_minute)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HourWindow {
    pub start_minute: usize,
    pub end_minute: usize,
}

impl HourWindow {
    pub fn hours(start: usize, end: usize) -> Self {
        HourWindow {
            start_minute: start * 60,
            end_minute: end * 60,
        }
    }

    pub fn len(&self) -> usize {
        self.end_minute.saturating_sub(self.start_minute)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Default for HourWindow {
    /// 9 a.m. to 8 p.m.
    fn default() -> Self {
        HourWindow::hours(9, 20)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiplierRanges {
    pub load: (f64, f64),
    pub pv: (f64, f64),
}

impl Default for MultiplierRanges {
    fn default() -> Self {
        MultiplierRanges {
            load: (0.2, 1.0),
            pv: (0.0, 1.0),
        }
    }
}

/// Where snapshot values come from.
#[derive(Debug, Clone, Copy)]
pub enum ScenarioSource<'a> {
    /// Independent uniform multipliers on each load's nominal demand and each
    /// PV system's rating.
    Uniform(MultiplierRanges),
    /// Every load and PV system reads its own profile at one minute drawn
    /// uniformly inside the window, so each snapshot is a moment of the day.
    Profiles {
        library: &'a ProfileLibrary,
        window: HourWindow,
    },
}

impl Default for ScenarioSource<'_> {
    fn default() -> Self {
        ScenarioSource::Uniform(MultiplierRanges::default())
    }
}

impl ScenarioSource<'_> {
    fn check(&self) -> Result<()> {
        match self {
            ScenarioSource::Uniform(r) => {
                for (name, (lo, hi)) in [("load", r.load), ("pv", r.pv)] {
                    if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo <= hi) {
                        return Err(Error::Config(format!("bad {name} multiplier range [{lo}, {hi}]")));
                    }
                }
                Ok(())
            }
            ScenarioSource::Profiles { library, window } => {
                if library.is_empty() {
                    return Err(Error::Data("profile library is empty".into()));
                }
                if window.is_empty() {
                    return Err(Error::Config("scenario window is empty".into()));
                }
                if window.end_minute > library.minutes() {
                    return Err(Error::Config(format!(
                        "window ends at minute {} but profiles have {} rows",
                        window.end_minute,
                        library.minutes()
                    )));
                }
                Ok(())
            }
        }
    }

    /// Draws one snapshot.
    pub fn sample<R: Rng>(&self, feeder: &FeederModel, rng: &mut R) -> OperatingPoint {
        match self {
            ScenarioSource::Uniform(r) => {
                let mut op = OperatingPoint::nominal(feeder);
                for (i, l) in feeder.loads().iter().enumerate() {
                    let m = uniform(rng, r.load);
                    op.load_kw[i] = l.peak_kw * m;
                    op.load_kvar[i] = l.kvar_for(op.load_kw[i]);
                }
                for (i, p) in feeder.pv().iter().enumerate() {
                    op.pv_kw[i] = p.rated_kw * uniform(rng, r.pv);
                }
                op
            }
            ScenarioSource::Profiles { library, window } => {
                let mut op = OperatingPoint::nominal(feeder);
                let m = rng.random_range(window.start_minute..window.end_minute);
                let at = |name: &Option<String>| name.as_deref().and_then(|n| library.get(n)).map(|c| c[m]);
                for (i, l) in feeder.loads().iter().enumerate() {
                    op.load_kw[i] = at(&l.profile).unwrap_or(l.peak_kw);
                    op.load_kvar[i] = at(&l.kvar_profile).unwrap_or_else(|| l.kvar_for(op.load_kw[i]));
                }
                for (i, p) in feeder.pv().iter().enumerate() {
                    op.pv_kw[i] = p
                        .profile
                        .as_deref()
                        .and_then(|n| library.get(n))
                        .map_or(0.0, |c| c[m].max(0.0));
                }
                op
            }
        }
    }
}

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// `count` reproducible snapshots; draw `i` depends only on `(seed, stream, i)`.
pub fn generate_scenarios(
    feeder: &FeederModel,
    source: &ScenarioSource<'_>,
    count: usize,
    seed: u64,
    stream: Stream,
) -> Result<Vec<OperatingPoint>> {
    check_source(feeder, source)?;
    Ok((0..count)
        .map(|i| source.sample(feeder, &mut draw_rng(seed, stream, i as u64)))
        .collect())
}

pub(crate) fn check_source(feeder: &FeederModel, source: &ScenarioSource<'_>) -> Result<()> {
    source.check()?;
    if let ScenarioSource::Profiles { library, .. } = source {
        library.check_feeder(feeder)?;
    }
    Ok(())
}
