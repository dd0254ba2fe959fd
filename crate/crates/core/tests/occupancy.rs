mod support;

use occtraj::mdp::{build_gridworld, rollout, rollout_capped, value_iteration, GridworldSpec, RewardKind};
use occtraj::occupancy::{
    bellman_flow_residual, dataset_from_rollouts, empirical_finite_horizon_occupancy, exact_discounted_occupancy,
    exact_episode_visitation, exact_finite_horizon_occupancy, finite_horizon_flow_residual, policy_state_values,
    policy_value, policy_value_direct, stationarity_rel_error_with, EpisodeMoments, OccupancyKind, OccupancyMeasure,
    PostTermination,
};
use occtraj::policy::PolicySnapshot;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::{finite_horizon_by_paths, monte_carlo_occupancy, random_mdp, random_policy, soften};

fn tv(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

proptest! {
    #[test]
    fn discounted_occupancy_satisfies_flow_and_values(seed in any::<u64>(), ns in 2usize..7, na in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mdp = random_mdp(&mut rng, ns, na, 0.85);
        let pi = random_policy(&mut rng, ns, na, 0.3);
        let occ = exact_discounted_occupancy(&mdp, &pi).unwrap();
        prop_assert!(bellman_flow_residual(&mdp, &occ) <= 1e-9);
        prop_assert!((occ.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let (j, jd) = (policy_value(&mdp, &pi).unwrap(), policy_value_direct(&mdp, &pi).unwrap());
        prop_assert!((j - jd).abs() <= 1e-9 * (1.0 + jd.abs()), "{j} vs {jd}");
        // v(s,a) = π(a|s)·u(s) recovers the policy wherever the state is visited.
        for (s, row) in occ.induced_policy().iter().enumerate() {
            if let Some(row) = row {
                for (a, p) in row.iter().enumerate() {
                    prop_assert!((p - pi.prob(s, a)).abs() <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn finite_horizon_matches_path_enumeration(seed in any::<u64>(), h in 1usize..=10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mdp = random_mdp(&mut rng, 2, 2, 0.9);
        let pi = random_policy(&mut rng, 2, 2, 0.2);
        let occ = exact_finite_horizon_occupancy(&mdp, &pi, h).unwrap();
        let paths = finite_horizon_by_paths(&mdp, &pi, h);
        for (x, y) in occ.weights().iter().zip(&paths) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
        prop_assert!(finite_horizon_flow_residual(&mdp, &pi, &occ, h).unwrap() <= 1e-9);
    }
}

#[test]
fn discounted_occupancy_matches_monte_carlo() {
    let mdp = build_gridworld(&GridworldSpec::corner_to_corner(5, RewardKind::Dense)).unwrap();
    let (opt, _) = value_iteration(&mdp, 1e-10);
    let pi = soften(&opt, 0.3);
    let exact = exact_discounted_occupancy(&mdp, &pi).unwrap();
    let mc = monte_carlo_occupancy(&mdp, &pi, 3000, &mut ChaCha8Rng::seed_from_u64(5));
    let d = tv(exact.weights(), &mc);
    assert!(d < 0.03, "TV {d}");
}

#[test]
fn state_values_agree_with_occupancy_value() {
    let mdp = build_gridworld(&GridworldSpec::corner_to_corner(5, RewardKind::Sparse).with_slip()).unwrap();
    let (opt, v_star) = value_iteration(&mdp, 1e-12);
    let v = policy_state_values(&mdp, &opt).unwrap();
    for (a, b) in v.iter().zip(&v_star) {
        assert!((a - b).abs() < 1e-8);
    }
    let start = mdp.mu().iter().position(|m| *m > 0.0).unwrap();
    assert!((policy_value(&mdp, &opt).unwrap() - v[start]).abs() < 1e-9);
}

#[test]
fn exact_visitation_satisfies_the_stationarity_identity() {
    let mdp = build_gridworld(&GridworldSpec::corner_to_corner(5, RewardKind::Dense).with_slip()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..5 {
        let pi = random_policy(&mut rng, 25, 4, 0.0).with_terminal_convention(&mdp);
        let occ = exact_episode_visitation(&mdp, &pi, mdp.max_steps()).unwrap();
        let moments = EpisodeMoments::exact(&mdp, &pi, mdp.max_steps()).unwrap();
        let err = stationarity_rel_error_with(&mdp, &occ, &moments).unwrap();
        assert!(err.abs() < 1e-9, "{err}");
    }
}

#[test]
fn rollout_dataset_converges_to_exact_visitation() {
    let mdp = build_gridworld(&GridworldSpec::corner_to_corner(5, RewardKind::Dense).with_slip()).unwrap();
    let (opt, _) = value_iteration(&mdp, 1e-10);
    let pi = soften(&opt, 0.4).with_terminal_convention(&mdp);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let eps: Vec<_> = (0..4000).map(|_| rollout(&mdp, &pi, &mut rng).unwrap()).collect();
    let empirical = dataset_from_rollouts(&eps, 25, 4).unwrap().to_occupancy().unwrap();
    let exact = exact_episode_visitation(&mdp, &pi, mdp.max_steps()).unwrap();
    assert!(empirical.total_variation(&exact) < 0.03);
    let sampled = EpisodeMoments::from_rollouts(&eps).unwrap();
    let truth = EpisodeMoments::exact(&mdp, &pi, mdp.max_steps()).unwrap();
    assert!((sampled.mean_length - truth.mean_length).abs() / truth.mean_length < 0.03);
}

#[test]
fn empirical_finite_horizon_converges() {
    let mdp = build_gridworld(&GridworldSpec::corner_to_corner(4, RewardKind::Dense).with_slip()).unwrap();
    let pi = PolicySnapshot::uniform(16, 4).with_terminal_convention(&mdp);
    let h = 12;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let eps: Vec<_> = (0..4000)
        .map(|_| rollout_capped(&mdp, &pi, h, &mut rng).unwrap())
        .collect();
    let est = empirical_finite_horizon_occupancy(&eps, 16, 4, h, PostTermination::Absorb).unwrap();
    let exact = exact_finite_horizon_occupancy(&mdp, &pi, h).unwrap();
    assert!(est.total_variation(&exact) < 0.03);
}

#[test]
fn measures_reject_bad_weights() {
    let kind = OccupancyKind::Dataset { samples: 1 };
    assert!(OccupancyMeasure::new(1, 2, vec![0.5, 0.6], kind.clone()).is_err());
    assert!(OccupancyMeasure::new(1, 2, vec![1.5, -0.5], kind.clone()).is_err());
    assert!(OccupancyMeasure::new(1, 2, vec![1.0], kind.clone()).is_err());
    assert!(OccupancyMeasure::normalized(1, 2, vec![0.0, 0.0], kind).is_err());
    assert!(exact_finite_horizon_occupancy(
        &build_gridworld(&GridworldSpec::corner_to_corner(3, RewardKind::Dense)).unwrap(),
        &PolicySnapshot::uniform(9, 4),
        0
    )
    .is_err());
}
