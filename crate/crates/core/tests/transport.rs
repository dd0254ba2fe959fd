mod support;

use occtraj::occupancy::{DatasetSource, OccupancyKind, OccupancyMeasure, PolicyDataset};
use occtraj::transport::{
    otdd, pairwise_distance_matrix, solve_transport, wasserstein1, GroundMetric, OtddSolver, PairSelection,
};
use proptest::prelude::*;
use support::{otdd_oracle, transport_lp, w1_oracle};

fn metric() -> GroundMetric {
    GroundMetric::new(vec![vec![0, 0], vec![1, 0], vec![0, 2], vec![3, 1]], 2, 1.0).unwrap()
}

fn measure(raw: &[f64]) -> OccupancyMeasure {
    OccupancyMeasure::normalized(4, 2, raw.to_vec(), OccupancyKind::Dataset { samples: 0 }).unwrap()
}

fn weights() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![Just(0.0), 0.01f64..1.0], 8)
        .prop_filter("some mass", |w| w.iter().sum::<f64>() > 0.0)
}

fn samples(max: usize) -> impl Strategy<Value = Vec<(usize, usize)>> {
    prop::collection::vec((0usize..4, 0usize..2), 1..=max)
}

fn dataset(s: &[(usize, usize)]) -> PolicyDataset {
    PolicyDataset::from_samples(4, 2, s.to_vec(), vec![1.0; s.len()], DatasetSource::ExactWeighted).unwrap()
}

proptest! {
    #[test]
    fn w1_matches_lp_oracle(a in weights(), b in weights()) {
        let (mu, nu) = (measure(&a), measure(&b));
        let m = metric();
        let (d, plan) = wasserstein1(&mu, &nu, &m).unwrap();
        let oracle = w1_oracle(mu.weights(), nu.weights(), |p, q| m.pair_cost(p, q));
        prop_assert!((d - oracle).abs() < 1e-9, "{d} vs {oracle}");
        for (x, y) in plan.source_marginal().iter().zip(mu.weights()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        for (x, y) in plan.target_marginal().iter().zip(nu.weights()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn w1_is_a_metric(a in weights(), b in weights(), c in weights()) {
        let m = metric();
        let (x, y, z) = (measure(&a), measure(&b), measure(&c));
        let d = |p: &OccupancyMeasure, q: &OccupancyMeasure| wasserstein1(p, q, &m).unwrap().0;
        prop_assert!(d(&x, &x).abs() < 1e-12);
        prop_assert!((d(&x, &y) - d(&y, &x)).abs() < 1e-9);
        prop_assert!(d(&x, &z) <= d(&x, &y) + d(&y, &z) + 1e-9);
        prop_assert!(d(&x, &y) <= m.diameter() + 1e-9);
        prop_assert!(d(&x, &y) + 1e-12 >= x.total_variation(&y) * 1.0_f64.min(m.action_scale()));
    }

    #[test]
    fn otdd_matches_nested_oracle(a in samples(10), b in samples(10)) {
        let m = metric();
        let d = otdd(&dataset(&a), &dataset(&b), &m).unwrap();
        let oracle = otdd_oracle(&a, &b, &m);
        prop_assert!((d - oracle).abs() < 1e-9, "{d} vs {oracle}");
    }

    #[test]
    fn transport_solver_matches_lp(
        supply in prop::collection::vec(0.05f64..1.0, 1..5),
        demand in prop::collection::vec(0.05f64..1.0, 1..5),
        seed_costs in prop::collection::vec(0.0f64..5.0, 25),
    ) {
        let total: f64 = supply.iter().sum();
        let scale = total / demand.iter().sum::<f64>();
        let demand: Vec<f64> = demand.iter().map(|d| d * scale).collect();
        let cost: Vec<f64> = seed_costs[..supply.len() * demand.len()].to_vec();
        let sol = solve_transport(&supply, &demand, &cost).unwrap();
        let oracle = transport_lp(&supply, &demand, &cost);
        prop_assert!((sol.objective - oracle).abs() < 1e-9 * (1.0 + oracle), "{} vs {oracle}", sol.objective);
    }
}

#[test]
fn otdd_solver_cache_does_not_change_results() {
    let m = metric();
    let sets = [
        vec![(0, 0), (1, 1), (2, 0)],
        vec![(3, 1), (1, 1)],
        vec![(0, 0), (0, 1), (2, 1), (3, 0)],
    ];
    let mut solver = OtddSolver::new();
    for a in &sets {
        for b in &sets {
            let cached = solver.distance(&dataset(a), &dataset(b), &m).unwrap();
            let fresh = otdd(&dataset(a), &dataset(b), &m).unwrap();
            assert_eq!(cached, fresh);
        }
    }
}

#[test]
fn otdd_vanishes_on_identical_datasets_and_prices_a_shift() {
    // Moving the only sample one cell costs the state step plus the label shift.
    let m = metric();
    let a = dataset(&[(0, 0)]);
    let b = dataset(&[(1, 0)]);
    assert_eq!(otdd(&a, &a, &m).unwrap(), 0.0);
    assert!((otdd(&a, &b, &m).unwrap() - 2.0).abs() < 1e-12);
}

#[test]
fn pairwise_matrix_is_symmetric_with_zero_diagonal() {
    let items = [
        measure(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
        measure(&[0.0, 0.0, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0]),
        measure(&[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.2, 0.8]),
    ];
    let m = metric();
    let dm = pairwise_distance_matrix(&items, PairSelection::Full, |a, b| Ok(wasserstein1(a, b, &m)?.0)).unwrap();
    for i in 0..3 {
        assert_eq!(dm.get(i, i), Some(0.0));
        for j in 0..3 {
            assert_eq!(dm.get(i, j), dm.get(j, i));
        }
    }
}

#[test]
fn rejects_mismatched_inputs() {
    let m = metric();
    let ok = measure(&[1.0; 8]);
    let other = OccupancyMeasure::normalized(2, 2, vec![1.0; 4], OccupancyKind::Dataset { samples: 0 }).unwrap();
    assert!(wasserstein1(&ok, &other, &m).is_err());
    assert!(GroundMetric::new(vec![vec![0]], 2, -1.0).is_err());
    assert!(GroundMetric::new(vec![vec![0], vec![0, 1]], 2, 1.0).is_err());
}
