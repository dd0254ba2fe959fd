//! Tabular learners that emit one policy snapshot per update.

mod psrl;
mod qlearning;
mod ucrl2;

pub use psrl::{train_psrl, train_psrl_with_model, PsrlPrior};
pub use qlearning::train_q_learning;
pub use ucrl2::{train_ucrl2, train_ucrl2_with_model};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{value_iteration, TabularMdp};
use crate::occupancy::{policy_value, EpisodeMoments};
use crate::policy::{greedy_actions, PolicySnapshot, PolicyTrace};

/// Returns within this relative tolerance of the optimum count as optimal.
pub const RETURN_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AgentVariant {
    /// Q-learning with a fixed exploration rate.
    QGreedy {
        epsilon: f64,
    },
    /// Q-learning with `ε ← max(decay·ε, floor)` per step after the warmup.
    QDecay {
        epsilon0: f64,
        decay: f64,
        floor: f64,
    },
    Ucrl2 {
        delta: f64,
    },
    Psrl {
        prior: PsrlPrior,
    },
}

impl AgentVariant {
    pub fn id(&self) -> String {
        match self {
            AgentVariant::QGreedy { epsilon } => format!("eps({epsilon})-greedy"),
            AgentVariant::QDecay { epsilon0, .. } => format!("eps({epsilon0})-decay"),
            AgentVariant::Ucrl2 { .. } => "UCRL2".into(),
            AgentVariant::Psrl { .. } => "PSRL".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cadence {
    #[default]
    PerEpisode,
    PerStep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub variant: AgentVariant,
    /// Q-learning step size.
    pub learning_rate: f64,
    pub total_episodes: usize,
    pub convergence_window: usize,
    pub cadence: Cadence,
    /// Record the ε-mixed behaviour policy instead of the greedy policy.
    pub snapshot_behavior_policy: bool,
    /// Steps before the exploration rate starts decaying.
    pub warmup_steps: usize,
    /// Multiplier on the UCRL2 confidence radii.
    pub confidence_scale: f64,
}

impl AgentConfig {
    pub fn new(variant: AgentVariant) -> Self {
        Self {
            variant,
            learning_rate: 0.5,
            total_episodes: 200,
            convergence_window: 5,
            cadence: Cadence::PerEpisode,
            snapshot_behavior_policy: false,
            warmup_steps: 500,
            confidence_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match &self.variant {
            AgentVariant::QGreedy { epsilon } if !(0.0..=1.0).contains(epsilon) => {
                return bad(format!("epsilon {epsilon} outside [0, 1]"))
            }
            AgentVariant::QDecay { epsilon0, decay, floor } => {
                if !(0.0..=1.0).contains(epsilon0) || !(0.0..=1.0).contains(floor) {
                    return bad(format!("epsilon0 {epsilon0} or floor {floor} outside [0, 1]"));
                }
                if !(*decay > 0.0 && *decay <= 1.0) {
                    return bad(format!("decay {decay} outside (0, 1]"));
                }
            }
            AgentVariant::Ucrl2 { delta } if !(*delta > 0.0 && *delta < 1.0) => {
                return bad(format!("delta {delta} outside (0, 1)"))
            }
            AgentVariant::Psrl { prior } => prior.validate()?,
            _ => {}
        }
        // A zero step size is allowed: it freezes the Q-table.
        if !(0.0..=1.0).contains(&self.learning_rate) {
            return bad(format!("learning_rate {} outside [0, 1]", self.learning_rate));
        }
        if self.total_episodes == 0 {
            return bad("total_episodes must be at least 1".into());
        }
        if self.convergence_window == 0 {
            return bad("convergence_window must be at least 1".into());
        }
        if !(self.confidence_scale > 0.0) || !self.confidence_scale.is_finite() {
            return bad(format!("confidence_scale {} must be positive", self.confidence_scale));
        }
        Ok(())
    }
}

/// Trains the configured agent with a ChaCha8 stream seeded by `seed`.
pub fn train(mdp: &TabularMdp, cfg: &AgentConfig, seed: u64) -> Result<PolicyTrace> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trace = match cfg.variant {
        AgentVariant::QGreedy { .. } | AgentVariant::QDecay { .. } => train_q_learning(mdp, cfg, &mut rng)?,
        AgentVariant::Ucrl2 { .. } => train_ucrl2(mdp, cfg, &mut rng)?,
        AgentVariant::Psrl { .. } => train_psrl(mdp, cfg, &mut rng)?,
    };
    trace.seed = seed;
    Ok(trace)
}

/// Return used by the convergence test.
///
/// On deterministic MDPs this is the undiscounted return of the greedy rollout (exact
/// expected capped return for stochastic policies); on stochastic MDPs it is the exact
/// discounted policy value.
pub fn evaluation_return(mdp: &TabularMdp, policy: &PolicySnapshot) -> Result<f64> {
    if mdp.is_deterministic() {
        if policy.is_deterministic() {
            let mut s = mdp.mu().iter().position(|p| *p == 1.0).map_or_else(
                || Err(Error::Usage("deterministic evaluation needs a point-mass start".into())),
                Ok,
            )?;
            let mut ret = 0.0;
            for _ in 0..mdp.max_steps() {
                if mdp.is_terminal(s) {
                    break;
                }
                let a = policy.mode_action(s);
                ret += mdp.reward(s, a);
                s = mdp.successors(s, a)[0].0;
            }
            Ok(ret)
        } else {
            Ok(EpisodeMoments::exact(mdp, policy, mdp.max_steps())?.mean_return)
        }
    } else {
        policy_value(mdp, policy)
    }
}

pub fn is_optimal_return(value: f64, optimal: f64) -> bool {
    (value - optimal).abs() <= RETURN_TOL * optimal.abs().max(1.0)
}

/// True when the last `window` returns all equal `optimal_return`.
pub fn check_convergence(returns: &[f64], optimal_return: f64, window: usize) -> bool {
    window >= 1
        && returns.len() >= window
        && returns[returns.len() - window..]
            .iter()
            .all(|r| is_optimal_return(*r, optimal_return))
}

/// Optimal policy and its evaluation return.
pub fn optimal_reference(mdp: &TabularMdp) -> Result<(PolicySnapshot, f64)> {
    let (pi, _) = value_iteration(mdp, 1e-10);
    let ret = evaluation_return(mdp, &pi)?;
    Ok((pi, ret))
}

/// Collects snapshots, evaluates them and applies the convergence test.
pub(crate) struct TraceBuilder<'a> {
    mdp: &'a TabularMdp,
    optimal_return: f64,
    window: usize,
    snapshots: Vec<PolicySnapshot>,
    returns: Vec<f64>,
    converged_at: Option<usize>,
    pub(crate) state_visits: Vec<u64>,
}

impl<'a> TraceBuilder<'a> {
    pub(crate) fn new(mdp: &'a TabularMdp, window: usize) -> Result<Self> {
        let (_, optimal_return) = optimal_reference(mdp)?;
        Ok(Self {
            mdp,
            optimal_return,
            window,
            snapshots: Vec::new(),
            returns: Vec::new(),
            converged_at: None,
            state_visits: vec![0; mdp.n_states()],
        })
    }

    /// Records a snapshot; returns true once the convergence test fires.
    pub(crate) fn push(&mut self, mut policy: PolicySnapshot, update_index: usize) -> Result<bool> {
        let ret = match self.snapshots.last() {
            Some(prev) if prev.same_policy(&policy) => prev.episodic_return,
            _ => evaluation_return(self.mdp, &policy)?,
        };
        policy.update_index = update_index;
        policy.episodic_return = ret;
        self.snapshots.push(policy);
        self.returns.push(ret);
        if self.converged_at.is_none() && check_convergence(&self.returns, self.optimal_return, self.window) {
            self.converged_at = Some(update_index);
        }
        Ok(self.converged_at.is_some())
    }

    pub(crate) fn visit(&mut self, s: usize) {
        self.state_visits[s] += 1;
    }

    pub(crate) fn finish(self, algorithm_id: String) -> PolicyTrace {
        PolicyTrace {
            snapshots: self.snapshots,
            converged: self.converged_at.is_some(),
            updates_to_convergence: self.converged_at,
            algorithm_id,
            seed: 0,
            state_visits: self.state_visits,
        }
    }
}

/// Visit counts and summed rewards per pair, plus next-state counts.
#[derive(Clone, Debug, PartialEq)]
pub struct CountModel {
    n_states: usize,
    n_actions: usize,
    pub(crate) next_counts: Vec<f64>,
    pub(crate) visits: Vec<f64>,
    pub(crate) reward_sum: Vec<f64>,
}

impl CountModel {
    pub fn empty(mdp: &TabularMdp) -> Self {
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        Self {
            n_states: ns,
            n_actions: na,
            next_counts: vec![0.0; ns * na * ns],
            visits: vec![0.0; ns * na],
            reward_sum: vec![0.0; ns * na],
        }
    }

    /// Pseudo-observations of the true model: `weight` visits per pair split by `T`.
    pub fn from_true_model(mdp: &TabularMdp, weight: f64) -> Self {
        let mut m = Self::empty(mdp);
        for s in 0..m.n_states {
            for a in 0..m.n_actions {
                let sa = s * m.n_actions + a;
                m.visits[sa] = weight;
                m.reward_sum[sa] = weight * mdp.reward(s, a);
                for (s2, p) in mdp.transition_row(s, a).iter().enumerate() {
                    m.next_counts[sa * m.n_states + s2] = weight * p;
                }
            }
        }
        m
    }

    pub(crate) fn observe(&mut self, s: usize, a: usize, r: f64, s2: usize) {
        let sa = s * self.n_actions + a;
        self.visits[sa] += 1.0;
        self.reward_sum[sa] += r;
        self.next_counts[sa * self.n_states + s2] += 1.0;
    }

    pub(crate) fn next_row(&self, sa: usize) -> &[f64] {
        &self.next_counts[sa * self.n_states..(sa + 1) * self.n_states]
    }
}

/// Discounted value iteration on a dense model; returns greedy actions (lowest index on ties).
pub(crate) fn solve_dense_model(
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    transition: &[f64],
    reward: &[f64],
    terminal: &[bool],
) -> Vec<usize> {
    let mut v = vec![0.0; n_states];
    let mut q = vec![0.0; n_states * n_actions];
    for _ in 0..100_000 {
        for s in 0..n_states {
            for a in 0..n_actions {
                let sa = s * n_actions + a;
                q[sa] = if terminal[s] {
                    0.0
                } else {
                    let row = &transition[sa * n_states..(sa + 1) * n_states];
                    reward[sa] + gamma * row.iter().zip(&v).map(|(p, x)| p * x).sum::<f64>()
                };
            }
        }
        let mut delta: f64 = 0.0;
        for s in 0..n_states {
            let best = q[s * n_actions..(s + 1) * n_actions]
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            delta = delta.max((best - v[s]).abs());
            v[s] = best;
        }
        let scale = v.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        if delta <= 1e-12 * scale {
            break;
        }
    }
    greedy_actions(n_actions, &q)
}

/// Uniformly random deterministic policy.
pub(crate) fn random_deterministic_policy<R: rand::Rng + ?Sized>(mdp: &TabularMdp, rng: &mut R) -> PolicySnapshot {
    let actions: Vec<usize> = (0..mdp.n_states())
        .map(|_| rng.random_range(0..mdp.n_actions()))
        .collect();
    PolicySnapshot::deterministic(mdp.n_actions(), &actions).expect("actions in range")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{build_gridworld, GridworldSpec, RewardKind};

    #[test]
    fn convergence_window() {
        assert!(check_convergence(&[0.0, 1.0, 1.0, 1.0, 1.0, 1.0], 1.0, 5));
        assert!(!check_convergence(&[1.0, 1.0, 1.0, 1.0, 0.5], 1.0, 5));
        assert!(!check_convergence(&[1.0, 1.0, 1.0], 1.0, 5));
        assert!(check_convergence(&[-36.0 + 1e-12], -36.0, 1));
    }

    #[test]
    fn config_validation() {
        let mut cfg = AgentConfig::new(AgentVariant::QGreedy { epsilon: 1.5 });
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.variant = AgentVariant::Ucrl2 { delta: 1.0 };
        assert!(cfg.validate().is_err());
        cfg.variant = AgentVariant::Ucrl2 { delta: 0.1 };
        assert!(cfg.validate().is_ok());
        cfg.learning_rate = 1.5;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn evaluation_of_optimal_policies() {
        let mdp = build_gridworld(&GridworldSpec::corner_to_corner(5, RewardKind::Dense)).unwrap();
        let (_, ret) = optimal_reference(&mdp).unwrap();
        assert_eq!(ret, -36.0);
        let mdp = build_gridworld(&GridworldSpec::corner_to_corner(5, RewardKind::Sparse)).unwrap();
        let (_, ret) = optimal_reference(&mdp).unwrap();
        assert!((ret - 0.72).abs() < 1e-12);
    }

    #[test]
    fn dense_solver_matches_value_iteration() {
        let spec = GridworldSpec::corner_to_corner(5, RewardKind::Dense).with_slip();
        let mdp = build_gridworld(&spec).unwrap();
        let terminal: Vec<bool> = (0..25).map(|s| mdp.is_terminal(s)).collect();
        let actions = solve_dense_model(
            25,
            4,
            mdp.gamma(),
            &(0..25 * 4)
                .flat_map(|sa| mdp.transition_row(sa / 4, sa % 4).to_vec())
                .collect::<Vec<_>>(),
            mdp.rewards(),
            &terminal,
        );
        let (pi, _) = value_iteration(&mdp, 1e-12);
        for s in 0..25 {
            if !mdp.is_terminal(s) {
                assert_eq!(actions[s], pi.mode_action(s));
            }
        }
    }
}
