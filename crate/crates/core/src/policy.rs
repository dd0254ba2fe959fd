//! Stochastic policy matrices and the ordered traces produced by training.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::TabularMdp;

/// Tolerance on row sums of a policy matrix.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Action values closer than this (relative to their magnitude) are treated as tied.
pub const GREEDY_TIE_TOL: f64 = 1e-9;

/// A stationary stochastic policy `probs[s * n_actions + a] = π(a | s)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicySnapshot {
    probs: Vec<f64>,
    n_states: usize,
    n_actions: usize,
    pub update_index: usize,
    /// Evaluation return at snapshot time (NaN when not evaluated).
    pub episodic_return: f64,
}

impl PolicySnapshot {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::Usage("policy needs at least one state and one action".into()));
        }
        if probs.len() != n_states * n_actions {
            return Err(Error::Usage(format!(
                "policy matrix has {} entries, expected {}x{}",
                probs.len(),
                n_states,
                n_actions
            )));
        }
        for (s, row) in probs.chunks(n_actions).enumerate() {
            if row.iter().any(|p| !(*p >= 0.0)) {
                return Err(Error::Usage(format!("policy row {s} has a negative or NaN entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::Usage(format!("policy row {s} sums to {sum}")));
            }
        }
        Ok(Self {
            probs,
            n_states,
            n_actions,
            update_index: 0,
            episodic_return: f64::NAN,
        })
    }

    /// One-hot policy taking `actions[s]` in state `s`.
    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Result<Self> {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(Error::Usage(format!("action {a} out of range in state {s}")));
            }
            probs[s * n_actions + a] = 1.0;
        }
        Self::new(actions.len(), n_actions, probs)
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        let p = 1.0 / n_actions as f64;
        Self {
            probs: vec![p; n_states * n_actions],
            n_states,
            n_actions,
            update_index: 0,
            episodic_return: f64::NAN,
        }
    }

    /// Greedy policy of an action-value table, ties broken towards the lowest action index.
    pub fn greedy(n_actions: usize, q: &[f64]) -> Self {
        let actions = greedy_actions(n_actions, q);
        Self::deterministic(n_actions, &actions).expect("greedy actions are in range")
    }

    pub fn with_index(mut self, update_index: usize) -> Self {
        self.update_index = update_index;
        self
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> usize {
        let row = self.row(s);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (a, p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return a;
            }
        }
        // Rounding can leave `acc` a hair below 1.
        row.iter().rposition(|p| *p > 0.0).unwrap_or(self.n_actions - 1)
    }

    /// Most probable action, lowest index on ties.
    pub fn mode_action(&self, s: usize) -> usize {
        let row = self.row(s);
        let mut best = 0;
        for a in 1..row.len() {
            if row[a] > row[best] {
                best = a;
            }
        }
        best
    }

    pub fn is_deterministic(&self) -> bool {
        self.probs.iter().all(|p| *p == 0.0 || *p == 1.0)
    }

    /// True when both snapshots hold the same action probabilities.
    pub fn same_policy(&self, other: &PolicySnapshot) -> bool {
        self.n_actions == other.n_actions && self.probs == other.probs
    }

    /// Puts all mass of terminal (absorbing) states on action 0.
    ///
    /// Behaviour in an absorbing state never matters for returns, and the empirical
    /// estimators record the terminal pair as `(goal, 0)` after an episode ends.
    pub fn with_terminal_convention(mut self, mdp: &TabularMdp) -> Self {
        for &g in mdp.goal_states() {
            let row = &mut self.probs[g * self.n_actions..(g + 1) * self.n_actions];
            row.iter_mut().for_each(|p| *p = 0.0);
            row[0] = 1.0;
        }
        self
    }

    pub(crate) fn check_dims(&self, mdp: &TabularMdp) -> Result<()> {
        if self.n_states != mdp.n_states() || self.n_actions != mdp.n_actions() {
            return Err(Error::Usage(format!(
                "policy is {}x{} but the MDP has {} states and {} actions",
                self.n_states,
                self.n_actions,
                mdp.n_states(),
                mdp.n_actions()
            )));
        }
        Ok(())
    }
}

/// Per-state argmax of `q`, treating near-equal values as ties resolved to the lowest index.
pub fn greedy_actions(n_actions: usize, q: &[f64]) -> Vec<usize> {
    q.chunks(n_actions)
        .map(|row| {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let tol = GREEDY_TIE_TOL * (1.0 + max.abs());
            row.iter().position(|v| *v >= max - tol).unwrap_or(0)
        })
        .collect()
}

/// The ordered sequence of snapshots produced by one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyTrace {
    pub snapshots: Vec<PolicySnapshot>,
    pub converged: bool,
    /// Update index at which the convergence criterion fired.
    pub updates_to_convergence: Option<usize>,
    pub algorithm_id: String,
    pub seed: u64,
    /// Behaviour-policy state visit counts over the whole run.
    pub state_visits: Vec<u64>,
}

impl PolicyTrace {
    pub fn final_snapshot(&self) -> &PolicySnapshot {
        self.snapshots.last().expect("trace is nonempty")
    }

    pub fn returns(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.episodic_return).collect()
    }

    /// Number of policy updates, i.e. one less than the number of snapshots.
    pub fn n_updates(&self) -> usize {
        self.snapshots.len().saturating_sub(1)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.snapshots.is_empty() {
            return Err(Error::Usage("policy trace has no snapshots".into()));
        }
        for w in self.snapshots.windows(2) {
            if w[1].update_index <= w[0].update_index {
                return Err(Error::Usage("snapshot update indices must strictly increase".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rejects_rows_that_do_not_sum_to_one() {
        assert!(PolicySnapshot::new(1, 2, vec![0.5, 0.6]).is_err());
        assert!(PolicySnapshot::new(1, 2, vec![-0.5, 1.5]).is_err());
        assert!(PolicySnapshot::new(1, 2, vec![0.25, 0.75]).is_ok());
    }

    #[test]
    fn greedy_breaks_ties_low() {
        let q = [1.0, 3.0, 3.0, 0.0, 2.0, 2.0 + 1e-13, 1.0, 2.0];
        assert_eq!(greedy_actions(4, &q), vec![1, 0]);
    }

    #[test]
    fn sampling_follows_row() {
        let pi = PolicySnapshot::new(1, 3, vec![0.2, 0.0, 0.8]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = [0usize; 3];
        for _ in 0..20_000 {
            counts[pi.sample_action(0, &mut rng)] += 1;
        }
        assert_eq!(counts[1], 0);
        assert!((counts[0] as f64 / 20_000.0 - 0.2).abs() < 0.015);
    }
}
