use rand::Rng;

use super::{AgentConfig, AgentVariant, Cadence, TraceBuilder};
use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::policy::{greedy_actions, PolicySnapshot, PolicyTrace};

struct Exploration {
    epsilon: f64,
    decay: Option<(f64, f64)>,
    warmup: usize,
}

impl Exploration {
    fn after_step(&mut self, step: usize) {
        if let Some((decay, floor)) = self.decay {
            if step >= self.warmup {
                self.epsilon = (decay * self.epsilon).max(floor);
            }
        }
    }
}

fn snapshot(q: &[f64], n_actions: usize, epsilon: f64, behaviour: bool) -> PolicySnapshot {
    let greedy = greedy_actions(n_actions, q);
    if !behaviour {
        return PolicySnapshot::deterministic(n_actions, &greedy).expect("greedy actions in range");
    }
    let explore = epsilon / n_actions as f64;
    let mut probs = vec![explore; q.len()];
    for (s, &a) in greedy.iter().enumerate() {
        probs[s * n_actions + a] += 1.0 - epsilon;
    }
    // Re-normalize against rounding in `explore * n_actions`.
    for row in probs.chunks_mut(n_actions) {
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= total);
    }
    PolicySnapshot::new(q.len() / n_actions, n_actions, probs).expect("ε-greedy rows are distributions")
}

/// Tabular Q-learning with ε-greedy exploration.
///
/// Q starts uniform in `[-1, 1]`; terminal states bootstrap to zero. Snapshots are the
/// greedy policy of Q (or the behaviour policy when configured), taken per episode or per step.
pub fn train_q_learning<R: Rng + ?Sized>(mdp: &TabularMdp, cfg: &AgentConfig, rng: &mut R) -> Result<PolicyTrace> {
    cfg.validate()?;
    let mut explore = match cfg.variant {
        AgentVariant::QGreedy { epsilon } => Exploration {
            epsilon,
            decay: None,
            warmup: 0,
        },
        AgentVariant::QDecay { epsilon0, decay, floor } => Exploration {
            epsilon: epsilon0,
            decay: Some((decay, floor)),
            warmup: cfg.warmup_steps,
        },
        _ => return Err(Error::Config("Q-learning needs a q_greedy or q_decay variant".into())),
    };
    let na = mdp.n_actions();
    let mut q: Vec<f64> = (0..mdp.n_pairs()).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let mut builder = TraceBuilder::new(mdp, cfg.convergence_window)?;
    let behaviour = cfg.snapshot_behavior_policy;
    let mut converged = builder.push(snapshot(&q, na, explore.epsilon, behaviour), 0)?;
    let mut step = 0usize;

    'episodes: for episode in 1..=cfg.total_episodes {
        if converged {
            break;
        }
        let mut s = mdp.sample_initial(rng);
        builder.visit(s);
        for _ in 0..mdp.max_steps() {
            if mdp.is_terminal(s) {
                break;
            }
            let a = if rng.random::<f64>() < explore.epsilon {
                rng.random_range(0..na)
            } else {
                greedy_actions(na, &q[s * na..(s + 1) * na])[0]
            };
            let (s2, r) = mdp.step(s, a, rng)?;
            builder.visit(s2);
            let future = if mdp.is_terminal(s2) {
                0.0
            } else {
                q[s2 * na..(s2 + 1) * na]
                    .iter()
                    .cloned()
                    .fold(f64::NEG_INFINITY, f64::max)
            };
            let sa = s * na + a;
            q[sa] += cfg.learning_rate * (r + mdp.gamma() * future - q[sa]);
            step += 1;
            explore.after_step(step);
            if cfg.cadence == Cadence::PerStep {
                converged = builder.push(snapshot(&q, na, explore.epsilon, behaviour), step)?;
                if converged {
                    break 'episodes;
                }
            }
            s = s2;
        }
        if cfg.cadence == Cadence::PerEpisode {
            converged = builder.push(snapshot(&q, na, explore.epsilon, behaviour), episode)?;
        }
    }
    Ok(builder.finish(cfg.variant.id()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{build_gridworld, GridworldSpec, RewardKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid() -> TabularMdp {
        build_gridworld(&GridworldSpec::corner_to_corner(5, RewardKind::Dense)).unwrap()
    }

    #[test]
    fn frozen_q_table_repeats_one_policy() {
        let mdp = grid();
        let mut cfg = AgentConfig::new(AgentVariant::QGreedy { epsilon: 1.0 });
        cfg.learning_rate = 0.0;
        cfg.total_episodes = 20;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let trace = train_q_learning(&mdp, &cfg, &mut rng).unwrap();
        assert_eq!(trace.snapshots.len(), 21);
        assert!(trace.snapshots.iter().all(|s| s.same_policy(&trace.snapshots[0])));
    }

    #[test]
    fn per_step_cadence_indexes_by_step() {
        let mdp = grid();
        let mut cfg = AgentConfig::new(AgentVariant::QGreedy { epsilon: 1.0 });
        cfg.cadence = Cadence::PerStep;
        cfg.total_episodes = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let trace = train_q_learning(&mdp, &cfg, &mut rng).unwrap();
        let idx: Vec<usize> = trace.snapshots.iter().map(|s| s.update_index).collect();
        assert_eq!(idx, (0..idx.len()).collect::<Vec<_>>());
    }

    #[test]
    fn behaviour_snapshots_mix_in_epsilon() {
        let p = snapshot(&[0.0, 1.0, 0.5, 0.2], 2, 0.5, true);
        assert_eq!(p.row(0), &[0.25, 0.75]);
        assert_eq!(p.row(1), &[0.75, 0.25]);
    }

    #[test]
    fn rejects_other_variants() {
        let mdp = grid();
        let cfg = AgentConfig::new(AgentVariant::Ucrl2 { delta: 0.1 });
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(train_q_learning(&mdp, &cfg, &mut rng).is_err());
    }
}
