use std::collections::BTreeMap;

use nalgebra::DMatrix;
use proptest::prelude::*;

use voltzone::feeder::{parse_feeder, tap_ratio, Node, TAP_LIMIT};
use voltzone::fixtures::{balanced_chain, feeder13, random_radial};
use voltzone::ibr::dispatch;
use voltzone::powerflow::{solve, OperatingPoint};
use voltzone::sensitivity::{compute_correlation, CorrelationMode, PhaseMatrix, VlsmQ};
use voltzone::vr::{automaton_tick, VrAutomatonState};
use voltzone::zoning::{fic_indices, vr_zones};
use voltzone::Phase;

fn samples_from(blocks: &[DMatrix<f64>]) -> Vec<VlsmQ> {
    let n = blocks[0].ncols();
    blocks
        .iter()
        .map(|m| VlsmQ {
            delta_q_kvar: 10.0,
            phases: BTreeMap::from([(
                Phase::A,
                PhaseMatrix {
                    nodes: (0..n).map(|i| Node::new(i, Phase::A)).collect(),
                    values: m.clone(),
                },
            )]),
            scenario: None,
        })
        .collect()
}

fn blocks(n: usize, s: usize) -> impl Strategy<Value = Vec<DMatrix<f64>>> {
    prop::collection::vec(prop::collection::vec(-1.0f64..1.0, n * n), s)
        .prop_map(move |v| v.into_iter().map(|d| DMatrix::from_vec(n, n, d)).collect())
}

fn correlation(b: &[DMatrix<f64>]) -> DMatrix<f64> {
    compute_correlation(&samples_from(b), CorrelationMode::Pooled)
        .unwrap()
        .phases[&Phase::A]
        .coefficients
        .clone()
}

proptest! {
    #[test]
    fn pearson_is_symmetric_bounded_with_unit_diagonal(b in (2usize..6, 2usize..5).prop_flat_map(|(n, s)| blocks(n, s))) {
        let c = correlation(&b);
        let n = c.nrows();
        for i in 0..n {
            prop_assert_eq!(c[(i, i)], 1.0);
            for j in 0..n {
                prop_assert_eq!(c[(i, j)], c[(j, i)]);
                prop_assert!((-1.0..=1.0).contains(&c[(i, j)]));
            }
        }
    }

    #[test]
    fn pearson_ignores_positive_affine_maps(
        b in (3usize..6, 2usize..4).prop_flat_map(|(n, s)| blocks(n, s)),
        col in 0usize..3,
        a in 0.01f64..100.0,
        shift in -5.0f64..5.0,
    ) {
        let c0 = correlation(&b);
        let scaled: Vec<DMatrix<f64>> = b
            .iter()
            .map(|m| {
                let mut m = m.clone();
                m.column_mut(col).apply(|x| *x = a * *x + shift);
                m
            })
            .collect();
        let c1 = correlation(&scaled);
        for i in 0..c0.nrows() {
            for j in 0..c0.ncols() {
                prop_assert!((c0[(i, j)] - c1[(i, j)]).abs() < 1e-9, "({}, {}) {} vs {}", i, j, c0[(i, j)], c1[(i, j)]);
            }
        }
    }

    #[test]
    fn dispatch_conserves_and_respects_capability(
        caps in prop::collection::vec(0.0f64..50.0, 1..8),
        fill in prop::collection::vec(-1.0f64..1.0, 8),
        request in -200.0f64..200.0,
    ) {
        let n = caps.len();
        let mut sp: Vec<f64> = (0..n).map(|i| fill[i] * caps[i]).collect();
        let before = sp.clone();
        let list: Vec<usize> = (0..n).rev().collect();
        let sign = request.signum();
        let headroom: f64 = (0..n).map(|i| (caps[i] - sign * sp[i]).max(0.0)).sum();
        let (alloc, remaining) = dispatch(request, &list, &mut sp, &caps);
        let moved: f64 = alloc.iter().map(|a| a.delta_kvar).sum();
        prop_assert!((moved.abs() - request.abs().min(headroom)).abs() < 1e-9);
        prop_assert!((moved + sign * remaining - request).abs() < 1e-9);
        for i in 0..n {
            prop_assert!(sp[i].abs() <= caps[i] + 1e-12);
        }
        // An inverter moves only once every earlier one in the list is full.
        for a in &alloc {
            let pos = list.iter().position(|&p| p == a.pv).unwrap();
            for &earlier in &list[..pos] {
                prop_assert!((caps[earlier] - sign * sp[earlier]).abs() < 1e-9 || sp[earlier] != before[earlier]);
            }
        }
    }

    #[test]
    fn fic_covers_every_node_once_and_is_repeatable(
        b in (2usize..7, 2usize..4).prop_flat_map(|(n, s)| blocks(n, s)),
        alpha in 0.05f64..=1.0,
    ) {
        let c = correlation(&b);
        let zones = fic_indices(&c, alpha);
        prop_assert_eq!(&zones, &fic_indices(&c, alpha));
        let mut seen: Vec<usize> = zones.iter().flatten().copied().collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..c.nrows()).collect::<Vec<_>>());
        prop_assert!(zones.iter().all(|z| !z.is_empty() && z.windows(2).all(|w| w[0] < w[1])));
    }

    #[test]
    fn automaton_tap_stays_in_range(
        volts in prop::collection::vec(0.8f64..1.2, 1..400),
        start in -16i32..=16,
    ) {
        let f = feeder13();
        let mut st = VrAutomatonState::new(0, &f.regulators()[0]);
        st.tap = start;
        st.time_delay = 15.0;
        for v in volts {
            automaton_tick(&mut st, v, 15.0).unwrap();
            prop_assert!(st.tap.abs() <= TAP_LIMIT);
            prop_assert!((tap_ratio(st.tap, 0.00625) - 1.0).abs() <= 0.1 + 1e-15);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn feeder_document_round_trips(n in 2usize..40, seed in any::<u64>()) {
        let f = random_radial(n, seed);
        let back = parse_feeder(&f.to_json()).unwrap();
        prop_assert_eq!(back.to_json(), f.to_json());
        prop_assert_eq!(&back, &f);
    }

    #[test]
    fn balanced_chain_stays_balanced(n in 2usize..20, load in 0.0f64..1.5) {
        let f = balanced_chain(n);
        let op = OperatingPoint::scaled(&f, load, 0.0);
        let st = solve(&f, &op.injections(&f), &f.initial_taps()).unwrap();
        for b in 0..f.bus_count() {
            let a = st.magnitude(Node::new(b, Phase::A));
            for p in [Phase::B, Phase::C] {
                prop_assert!((st.magnitude(Node::new(b, p)) - a).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn reactive_injection_raises_own_voltage(n in 2usize..30, seed in any::<u64>(), pick in any::<prop::sample::Index>(), q in 0.5f64..200.0) {
        let f = random_radial(n, seed);
        let nodes = f.nodes();
        let node = nodes[pick.index(nodes.len())];
        let op = OperatingPoint::nominal(&f);
        let base = op.injections(&f);
        let mut more = base.clone();
        more.add(node, 0.0, -q).unwrap();
        let v0 = solve(&f, &base, &f.initial_taps()).unwrap().magnitude(node);
        let v1 = solve(&f, &more, &f.initial_taps()).unwrap().magnitude(node);
        prop_assert!(v1 >= v0 - 1e-9, "{} -> {}", v0, v1);
    }
}

#[test]
fn regulator_zones_tile_each_phase() {
    for f in [feeder13(), voltzone::fixtures::pv_feeder()] {
        let zones = vr_zones(&f);
        for phase in Phase::ALL {
            let mut covered: Vec<usize> = zones
                .iter()
                .filter(|z| z.phase == phase)
                .flat_map(|z| z.buses.clone())
                .collect();
            let n = covered.len();
            covered.sort_unstable();
            covered.dedup();
            assert_eq!(covered.len(), n, "overlapping zones on phase {phase}");
            // Every bus past the first regulator on this phase is covered.
            let expected: Vec<usize> = (0..f.bus_count())
                .filter(|&b| f.bus(b).phases.contains(phase) && !f.upstream_regulators(b).is_empty())
                .filter(|&b| {
                    f.upstream_regulators(b)
                        .iter()
                        .any(|&r| f.regulators()[r].phase == phase)
                })
                .collect();
            assert_eq!(covered, expected, "phase {phase}");
        }
    }
}
