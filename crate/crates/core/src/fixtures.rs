//! Bundled synthetic feeders and profile generators.
//!
//! `feeder13` is a small three-phase feeder with a substation tap changer and
//! one line regulator. `pv_feeder` is a larger, PV-heavy feeder with cascaded
//! regulators and single-phase laterals. Both are stored as JSON under
//! `fixtures/` and rebuilt here so the files can be regenerated.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::feeder::{
    Bus, FeederModel, LineSegment, LoadPoint, PvSystem, RegulatorKind, Source, VoltageRegulatorDevice,
    DEFAULT_OVERSIZE, DEFAULT_TAP_STEP,
};
use crate::phase::{Phase, PhaseSet};
use crate::profiles::ProfileLibrary;
use crate::sim::DeviceSettings;

pub const FEEDER13_JSON: &str = include_str!("../fixtures/feeder13.json");
pub const PV_FEEDER_JSON: &str = include_str!("../fixtures/pv_feeder.json");

const KM_PER_MILE: f64 = 1.609344;

/// Overhead three-phase line, ohm/km.
fn z_three_phase() -> Vec<Vec<[f64; 2]>> {
    let per_mile = [
        [[0.3465, 1.0179], [0.1560, 0.5017], [0.1580, 0.4236]],
        [[0.1560, 0.5017], [0.3375, 1.0478], [0.1535, 0.3849]],
        [[0.1580, 0.4236], [0.1535, 0.3849], [0.3414, 1.0348]],
    ];
    per_mile
        .iter()
        .map(|row| {
            row.iter()
                .map(|&[r, x]| [round6(r / KM_PER_MILE), round6(x / KM_PER_MILE)])
                .collect()
        })
        .collect()
}

/// Overhead single-phase lateral with neutral return, ohm/km.
fn z_single_phase() -> Vec<Vec<[f64; 2]>> {
    vec![vec![[0.35, 0.7]]]
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// Incremental feeder document builder.
#[derive(Debug, Clone, Default)]
pub struct FeederBuilder {
    buses: Vec<Bus>,
    lines: Vec<LineSegment>,
    regulators: Vec<VoltageRegulatorDevice>,
    loads: Vec<LoadPoint>,
    pv: Vec<PvSystem>,
}

impl FeederBuilder {
    pub fn bus(&mut self, id: &str, phases: PhaseSet, base_kv: f64) -> &mut Self {
        self.buses.push(Bus {
            id: id.into(),
            phases,
            base_kv,
        });
        self
    }

    pub fn line(&mut self, id: &str, from: &str, to: &str, length_km: f64, z: Vec<Vec<[f64; 2]>>) -> &mut Self {
        self.lines.push(LineSegment {
            id: id.into(),
            from: from.into(),
            to: to.into(),
            length_km,
            z,
        });
        self
    }

    #[allow(clippy::too_many_arguments)]
    pub fn regulator(
        &mut self,
        id: &str,
        kind: RegulatorKind,
        line: &str,
        phase: Phase,
        v_set: f64,
        deadband: f64,
        time_delay: f64,
    ) -> &mut Self {
        self.regulators.push(VoltageRegulatorDevice {
            id: id.into(),
            kind,
            line: line.into(),
            phase,
            tap: 0,
            step_pu: DEFAULT_TAP_STEP,
            v_set,
            deadband,
            time_delay,
        });
        self
    }

    pub fn load(&mut self, bus: &str, phase: Phase, peak_kw: f64, profile: Option<String>) -> &mut Self {
        self.loads.push(LoadPoint {
            bus: bus.into(),
            phase,
            peak_kw,
            profile,
            power_factor: None,
            kvar_profile: None,
        });
        self
    }

    pub fn pv(&mut self, id: &str, bus: &str, phase: Phase, rated_kw: f64, profile: Option<String>) -> &mut Self {
        self.pv.push(PvSystem {
            id: id.into(),
            bus: bus.into(),
            phase,
            rated_kw,
            oversize: DEFAULT_OVERSIZE,
            profile,
        });
        self
    }

    pub fn build(&self, source_bus: &str, nominal_kv: f64) -> crate::Result<FeederModel> {
        FeederModel::new(
            self.buses.clone(),
            self.lines.clone(),
            self.regulators.clone(),
            self.loads.clone(),
            self.pv.clone(),
            Source {
                bus: source_bus.into(),
                nominal_kv,
                voltage_pu: 1.0,
            },
        )
    }
}

const BASE_KV: f64 = 7.2;
const NOMINAL_KV: f64 = 12.47;

/// The bundled 13-bus feeder, parsed from its JSON file.
pub fn feeder13() -> FeederModel {
    crate::parse_feeder(FEEDER13_JSON).expect("bundled 13-bus feeder is valid")
}

/// Source of truth for `fixtures/feeder13.json`.
pub fn build_feeder13() -> FeederModel {
    let abc = PhaseSet::ABC;
    let mut b = FeederBuilder::default();
    for id in ["src", "sub", "1", "2", "3", "4", "5", "6"] {
        b.bus(id, abc, BASE_KV);
    }
    b.bus("7", PhaseSet::single(Phase::A), BASE_KV)
        .bus("8", PhaseSet::single(Phase::A), BASE_KV)
        .bus("9", PhaseSet::single(Phase::B), BASE_KV)
        .bus("10", PhaseSet::single(Phase::C), BASE_KV)
        .bus("11", PhaseSet::single(Phase::C), BASE_KV);
    b.line("l-sub", "src", "sub", 0.05, z_three_phase())
        .line("l1", "sub", "1", 1.2, z_three_phase())
        .line("l2", "1", "2", 1.0, z_three_phase())
        .line("l3", "2", "3", 1.0, z_three_phase())
        .line("l4", "3", "4", 0.8, z_three_phase())
        .line("l5", "4", "5", 1.0, z_three_phase())
        .line("l6", "5", "6", 1.0, z_three_phase())
        .line("l7", "2", "7", 0.8, z_single_phase())
        .line("l8", "7", "8", 0.8, z_single_phase())
        .line("l9", "3", "9", 1.0, z_single_phase())
        .line("l10", "5", "10", 0.8, z_single_phase())
        .line("l11", "10", "11", 0.8, z_single_phase());
    for p in Phase::ALL {
        b.regulator(&format!("oltc-{p}"), RegulatorKind::Oltc, "l-sub", p, 123.0, 4.0, 30.0);
    }
    for p in Phase::ALL {
        b.regulator(&format!("svr-{p}"), RegulatorKind::Svr, "l4", p, 123.0, 4.0, 45.0);
    }
    for bus in ["1", "2", "3", "4", "5", "6"] {
        for p in Phase::ALL {
            b.load(bus, p, 60.0, None);
        }
    }
    b.load("7", Phase::A, 40.0, None)
        .load("8", Phase::A, 40.0, None)
        .load("9", Phase::B, 50.0, None)
        .load("10", Phase::C, 40.0, None)
        .load("11", Phase::C, 40.0, None);
    b.pv("pv-8", "8", Phase::A, 60.0, None)
        .pv("pv-9", "9", Phase::B, 60.0, None)
        .pv("pv-6b", "6", Phase::B, 80.0, None)
        .pv("pv-11", "11", Phase::C, 60.0, None);
    b.build("src", NOMINAL_KV).expect("13-bus feeder is valid")
}

/// The bundled PV-heavy feeder, parsed from its JSON file.
pub fn pv_feeder() -> FeederModel {
    crate::parse_feeder(PV_FEEDER_JSON).expect("bundled PV feeder is valid")
}

/// Source of truth for `fixtures/pv_feeder.json`.
///
/// A stiff 12-section trunk with a three-phase regulator between sections 6
/// and 7 and small loads just downstream of each three-phase regulator. Every
/// trunk bus feeds one single-phase lateral: an unloaded express run ending
/// in a tight cluster of PV-heavy customers. The laterals off trunk buses 3
/// and 10 repeat the pattern behind their own regulators, and the lateral off
/// bus 12 carries half again as much PV.
pub fn build_pv_feeder() -> FeederModel {
    const EXPRESS_BUSES: usize = 6;
    const EXPRESS_KM: f64 = 0.6;
    const CLUSTER_BUSES: usize = 8;
    const CLUSTER_KM: f64 = 0.05;
    const CUSTOMER_KW: f64 = 15.0;
    const PV_KW: f64 = 80.0;

    let abc = PhaseSet::ABC;
    let mut b = FeederBuilder::default();
    b.bus("src", abc, BASE_KV).bus("sub", abc, BASE_KV);
    b.line("l-sub", "src", "sub", 0.05, z_three_phase());
    for p in Phase::ALL {
        b.regulator(&format!("oltc-{p}"), RegulatorKind::Oltc, "l-sub", p, 123.0, 4.0, 30.0);
    }
    let trunk = 12;
    let mut prev = "sub".to_string();
    for k in 1..=trunk {
        let id = format!("t{k}");
        b.bus(&id, abc, BASE_KV);
        b.line(&format!("l-{id}"), &prev, &id, 0.4, z_three_phase());
        if k == 1 || k == 7 {
            for p in Phase::ALL {
                b.load(&id, p, 10.0, Some(format!("load-{id}-{p}")));
            }
        }
        prev = id;
    }
    for p in Phase::ALL {
        b.regulator(&format!("svr2-{p}"), RegulatorKind::Svr, "l-t7", p, 123.0, 4.0, 45.0);
    }

    for k in 1..=trunk {
        let (phase, sections, regulator) = match k {
            3 => (Phase::B, 2, Some(("svr3", 45.0))),
            10 => (Phase::A, 2, Some(("svr4", 60.0))),
            _ => (Phase::ALL[k % 3], 1, None),
        };
        let pv_kw = if k == trunk { 1.5 * PV_KW } else { PV_KW };
        let mut prev = format!("t{k}");
        let mut j = 0;
        for section in 0..sections {
            for e in 0..EXPRESS_BUSES {
                j += 1;
                let id = format!("t{k}-{j}");
                let line = format!("l-{id}");
                b.bus(&id, PhaseSet::single(phase), BASE_KV);
                b.line(&line, &prev, &id, EXPRESS_KM, z_single_phase());
                if let (1, 0, Some((name, delay))) = (section, e, regulator) {
                    b.regulator(name, RegulatorKind::Svr, &line, phase, 123.0, 4.0, delay);
                }
                prev = id;
            }
            for _ in 0..CLUSTER_BUSES {
                j += 1;
                let id = format!("t{k}-{j}");
                b.bus(&id, PhaseSet::single(phase), BASE_KV);
                b.line(&format!("l-{id}"), &prev, &id, CLUSTER_KM, z_single_phase());
                b.load(&id, phase, CUSTOMER_KW, Some(format!("load-{id}")));
                b.pv(&format!("pv-{id}"), &id, phase, pv_kw, Some(format!("pv-{id}")));
                prev = id;
            }
        }
    }
    b.build("src", NOMINAL_KV).expect("PV feeder is valid")
}

/// Delays used when the regulators run under zonal coordination: staggered
/// from the substation outwards.
pub fn coordinated_delays(feeder: &FeederModel) -> BTreeMap<String, DeviceSettings> {
    feeder
        .regulators()
        .iter()
        .map(|r| {
            let delay = if r.is_substation_oltc() {
                75.0
            } else if r.id.starts_with("svr4") {
                105.0
            } else {
                90.0
            };
            (
                r.id.clone(),
                DeviceSettings {
                    time_delay: Some(delay),
                    ..Default::default()
                },
            )
        })
        .collect()
}

/// Random radial feeder of `n` three-phase buses: each new bus hangs off a
/// uniformly chosen earlier bus. Every bus carries a balanced load.
pub fn random_radial(n: usize, seed: u64) -> FeederModel {
    assert!(n >= 2, "need at least two buses");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = FeederBuilder::default();
    b.bus("b0", PhaseSet::ABC, BASE_KV);
    for i in 1..n {
        let parent = rng.random_range(0..i);
        let id = format!("b{i}");
        b.bus(&id, PhaseSet::ABC, BASE_KV);
        let km = rng.random_range(0.1..0.6);
        b.line(&format!("l{i}"), &format!("b{parent}"), &id, km, z_three_phase());
        for p in Phase::ALL {
            b.load(&id, p, rng.random_range(5.0..25.0), None);
        }
    }
    b.build("b0", NOMINAL_KV).expect("random radial feeder is valid")
}

/// Chain of `n` three-phase buses with identical per-phase impedance, no
/// mutual coupling, and equal loads on every phase.
pub fn balanced_chain(n: usize) -> FeederModel {
    let z = vec![
        vec![[0.3, 0.6], [0.0, 0.0], [0.0, 0.0]],
        vec![[0.0, 0.0], [0.3, 0.6], [0.0, 0.0]],
        vec![[0.0, 0.0], [0.0, 0.0], [0.3, 0.6]],
    ];
    let mut b = FeederBuilder::default();
    b.bus("b0", PhaseSet::ABC, BASE_KV);
    for i in 1..n {
        let id = format!("b{i}");
        b.bus(&id, PhaseSet::ABC, BASE_KV);
        b.line(&format!("l{i}"), &format!("b{}", i - 1), &id, 0.5, z.clone());
        for p in Phase::ALL {
            b.load(&id, p, 50.0, None);
        }
    }
    b.build("b0", NOMINAL_KV).expect("balanced chain is valid")
}

/// Normalized winter-day household demand at minute `m`: a morning and an
/// evening peak over a night base.
fn load_shape(m: f64) -> f64 {
    let h = m / 60.0;
    let bump = |center: f64, width: f64| (-((h - center) / width).powi(2)).exp();
    (0.30 + 0.45 * bump(7.5, 1.5) + 0.20 * bump(12.5, 2.5) + 0.70 * bump(18.5, 2.0)).min(1.0)
}

/// Clear-sky PV output fraction at minute `m`: zero before 7:00 and after
/// 17:00, a cosine-squared bell in between.
fn clear_sky(m: f64) -> f64 {
    let h = m / 60.0;
    if !(7.0..17.0).contains(&h) {
        return 0.0;
    }
    let x = (h - 12.0) / 5.0 * std::f64::consts::FRAC_PI_2;
    x.cos().powi(2)
}

/// Cloud attenuation series for one region: passing clouds of a few minutes
/// that cut output to 30–70%.
fn cloud_series(rng: &mut ChaCha8Rng, minutes: usize) -> Vec<f64> {
    let mut out = vec![1.0; minutes];
    let mut m = 0;
    while m < minutes {
        m += rng.random_range(8..40);
        let len = rng.random_range(2..9);
        let depth = rng.random_range(0.3..0.7);
        for slot in out.iter_mut().skip(m).take(len) {
            *slot = depth;
        }
        m += len;
    }
    out
}

/// One day of minute profiles for every profile referenced by `feeder`.
/// Loads follow the household shape with per-load scaling and noise; PV
/// follows the clear-sky bell with clouds shared by the three regions a
/// system falls in (by bus index).
pub fn synthetic_day(feeder: &FeederModel, seed: u64) -> ProfileLibrary {
    const MINUTES: usize = 1440;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let regions: Vec<Vec<f64>> = (0..3).map(|_| cloud_series(&mut rng, MINUTES)).collect();
    let mut lib = ProfileLibrary::new();
    for load in feeder.loads() {
        let Some(name) = &load.profile else { continue };
        if lib.get(name).is_some() {
            continue;
        }
        let scale = rng.random_range(0.8..1.0);
        let shift = rng.random_range(-30.0..30.0);
        let values = (0..MINUTES)
            .map(|m| {
                let noise = rng.random_range(-0.05..0.05);
                round4(load.peak_kw * scale * (load_shape(m as f64 + shift) + noise).max(0.05))
            })
            .collect();
        lib.insert(name.clone(), values).expect("fresh profile");
    }
    let buses = feeder.bus_count().max(1);
    for (i, pv) in feeder.pv().iter().enumerate() {
        let Some(name) = &pv.profile else { continue };
        if lib.get(name).is_some() {
            continue;
        }
        let clouds = &regions[feeder.pv_bus(i) * 3 / buses];
        let values = (0..MINUTES)
            .map(|m| round4(pv.rated_kw * 0.95 * clear_sky(m as f64) * clouds[m]))
            .collect();
        lib.insert(name.clone(), values).expect("fresh profile");
    }
    lib
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_files_match_builders() {
        assert_eq!(feeder13(), build_feeder13());
        assert_eq!(pv_feeder(), build_pv_feeder());
    }

    #[test]
    fn profiles_cover_feeder() {
        let f = build_pv_feeder();
        let lib = synthetic_day(&f, 7);
        lib.check_feeder(&f).unwrap();
        assert_eq!(lib.minutes(), 1440);
        assert_eq!(synthetic_day(&f, 7), lib);
    }

    #[test]
    fn clear_sky_is_zero_at_night() {
        assert_eq!(clear_sky(6.0 * 60.0), 0.0);
        assert_eq!(clear_sky(17.5 * 60.0), 0.0);
        assert!((clear_sky(12.0 * 60.0) - 1.0).abs() < 1e-12);
    }
}
