use occtraj::agents::{optimal_reference, train, AgentConfig, AgentVariant, Cadence, PsrlPrior};
use occtraj::harness::{preset, PRESETS};
use occtraj::mdp::{build_gridworld, GridworldSpec, RewardKind};

fn agents() -> Vec<AgentConfig> {
    let mut out = vec![
        AgentConfig::new(AgentVariant::QGreedy { epsilon: 1.0 }),
        AgentConfig::new(AgentVariant::QDecay {
            epsilon0: 0.9,
            decay: 0.99,
            floor: 0.05,
        }),
        AgentConfig::new(AgentVariant::Ucrl2 { delta: 0.1 }),
        AgentConfig::new(AgentVariant::Psrl {
            prior: PsrlPrior::default(),
        }),
    ];
    for a in &mut out {
        a.total_episodes = 150;
    }
    out
}

#[test]
fn training_is_deterministic_per_seed() {
    let mdp = build_gridworld(&GridworldSpec::corner_to_corner(4, RewardKind::Dense).with_slip()).unwrap();
    for cfg in agents() {
        let a = train(&mdp, &cfg, 11).unwrap();
        let b = train(&mdp, &cfg, 11).unwrap();
        assert_eq!(a, b, "{}", cfg.variant.id());
    }
}

#[test]
fn traces_are_well_formed() {
    let mdp = build_gridworld(&GridworldSpec::corner_to_corner(4, RewardKind::Dense)).unwrap();
    let (_, optimal) = optimal_reference(&mdp).unwrap();
    for mut cfg in agents() {
        for cadence in [Cadence::PerEpisode, Cadence::PerStep] {
            cfg.cadence = cadence;
            let trace = train(&mdp, &cfg, 3).unwrap();
            assert!(!trace.snapshots.is_empty());
            for w in trace.snapshots.windows(2) {
                assert!(w[1].update_index > w[0].update_index);
            }
            for s in &trace.snapshots {
                assert!(s.episodic_return <= optimal + 1e-9);
            }
            if let Some(k) = trace.updates_to_convergence {
                assert!(trace.converged);
                assert!(trace.snapshots.iter().any(|s| s.update_index == k));
            }
            assert_eq!(trace.state_visits.len(), mdp.n_states());
        }
    }
}

#[test]
fn model_based_presets_converge() {
    for name in ["table1-ucrl2", "table1-psrl"] {
        let cfg = preset(name).unwrap().resolve().unwrap();
        let mdp = build_gridworld(&cfg.env).unwrap();
        for seed in 0..3 {
            let trace = train(&mdp, &cfg.agent, seed).unwrap();
            assert!(trace.converged, "{name} seed {seed} did not converge");
        }
    }
}

#[test]
fn invalid_settings_are_rejected() {
    let mdp = build_gridworld(&GridworldSpec::corner_to_corner(3, RewardKind::Dense)).unwrap();
    let bad = [
        AgentVariant::QGreedy { epsilon: 1.5 },
        AgentVariant::QDecay {
            epsilon0: 0.5,
            decay: 0.0,
            floor: 0.0,
        },
        AgentVariant::Ucrl2 { delta: 1.0 },
    ];
    for v in bad {
        assert!(train(&mdp, &AgentConfig::new(v), 0).is_err());
    }
    let mut zero = AgentConfig::new(AgentVariant::QGreedy { epsilon: 0.5 });
    zero.total_episodes = 0;
    assert!(train(&mdp, &zero, 0).is_err());
}

#[test]
fn every_preset_resolves() {
    for name in PRESETS {
        let cfg = preset(name).unwrap().resolve().unwrap();
        assert!(cfg.trials >= 1, "{name}");
    }
    assert!(preset("table3-psrl").is_err());
}
