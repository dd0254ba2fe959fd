//! Exact and empirical occupancy measures over state-action pairs.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{Rollout, TabularMdp};
use crate::policy::PolicySnapshot;

/// Tolerance on the total mass of an occupancy measure.
pub const NORMALIZATION_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum OccupancyKind {
    ExactDiscounted {
        gamma: f64,
    },
    ExactFiniteHorizon {
        horizon: usize,
    },
    /// Normalized expected visits before the episode ends.
    ExactEpisode {
        cap: usize,
    },
    EmpiricalDiscounted {
        gamma: f64,
        truncation: usize,
        rollouts: usize,
    },
    EmpiricalFiniteHorizon {
        horizon: usize,
        rollouts: usize,
    },
    /// Sample frequencies of a policy dataset.
    Dataset {
        samples: usize,
    },
}

/// A probability distribution over `(state, action)` pairs, indexed `s * n_actions + a`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupancyMeasure {
    weights: Vec<f64>,
    n_states: usize,
    n_actions: usize,
    pub kind: OccupancyKind,
}

impl OccupancyMeasure {
    pub fn new(n_states: usize, n_actions: usize, weights: Vec<f64>, kind: OccupancyKind) -> Result<Self> {
        if weights.len() != n_states * n_actions {
            return Err(Error::Usage(format!(
                "occupancy has {} weights, expected {}",
                weights.len(),
                n_states * n_actions
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Usage("occupancy weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::Usage(format!("occupancy weights sum to {total}")));
        }
        Ok(Self {
            weights,
            n_states,
            n_actions,
            kind,
        })
    }

    /// Builds a measure from nonnegative masses, dividing by their total.
    pub fn normalized(n_states: usize, n_actions: usize, mut weights: Vec<f64>, kind: OccupancyKind) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Usage("cannot normalize an empty measure".into()));
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Self::new(n_states, n_actions, weights, kind)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, s: usize, a: usize) -> f64 {
        self.weights[s * self.n_actions + a]
    }

    /// `(pair index, weight)` for every pair with positive weight.
    pub fn support(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0)
            .map(|(i, w)| (i, *w))
    }

    pub fn state_marginal(&self) -> Vec<f64> {
        self.weights
            .chunks(self.n_actions)
            .map(|row| row.iter().sum())
            .collect()
    }

    /// `E_v[f(s, a)]` for a table `f` indexed like the weights.
    pub fn expectation(&self, table: &[f64]) -> f64 {
        self.weights.iter().zip(table).map(|(w, f)| w * f).sum()
    }

    /// Recovers `π(a|s) = v(s,a) / Σ_a' v(s,a')`; states without mass get `None`.
    pub fn induced_policy(&self) -> Vec<Option<Vec<f64>>> {
        self.weights
            .chunks(self.n_actions)
            .map(|row| {
                let total: f64 = row.iter().sum();
                (total > 0.0).then(|| row.iter().map(|w| w / total).collect())
            })
            .collect()
    }

    pub fn total_variation(&self, other: &OccupancyMeasure) -> f64 {
        0.5 * self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}

fn check_policy(mdp: &TabularMdp, policy: &PolicySnapshot) -> Result<()> {
    if policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions() {
        return Err(Error::Usage(format!(
            "policy is {}x{} but the MDP has {} states and {} actions",
            policy.n_states(),
            policy.n_actions(),
            mdp.n_states(),
            mdp.n_actions()
        )));
    }
    Ok(())
}

/// Sparse rows of the state chain `P^π(s'|s) = Σ_a T[s][a][s'] π(a|s)`.
fn state_chain(mdp: &TabularMdp, policy: &PolicySnapshot, s: usize) -> Vec<(usize, f64)> {
    let mut row: BTreeMap<usize, f64> = BTreeMap::new();
    for a in 0..mdp.n_actions() {
        let p = policy.prob(s, a);
        if p == 0.0 {
            continue;
        }
        for &(s2, t) in mdp.successors(s, a) {
            *row.entry(s2).or_insert(0.0) += p * t;
        }
    }
    row.into_iter().collect()
}

/// States reachable from the support of `mu` under `policy`, in increasing order.
fn reachable_states(mdp: &TabularMdp, policy: &PolicySnapshot) -> (Vec<usize>, Vec<Vec<(usize, f64)>>) {
    let n = mdp.n_states();
    let mut seen = vec![false; n];
    let mut stack: Vec<usize> = (0..n).filter(|&s| mdp.mu()[s] > 0.0).collect();
    stack.iter().for_each(|&s| seen[s] = true);
    let mut rows = vec![Vec::new(); n];
    while let Some(s) = stack.pop() {
        rows[s] = state_chain(mdp, policy, s);
        for &(s2, _) in &rows[s] {
            if !seen[s2] {
                seen[s2] = true;
                stack.push(s2);
            }
        }
    }
    let states: Vec<usize> = (0..n).filter(|&s| seen[s]).collect();
    (states, rows)
}

/// Solves `(I - γ P^πᵀ) u = (1-γ) μ` restricted to the states reachable under `policy`.
fn discounted_state_occupancy(mdp: &TabularMdp, policy: &PolicySnapshot) -> Result<Vec<f64>> {
    let gamma = mdp.gamma();
    let (states, rows) = reachable_states(mdp, policy);
    let k = states.len();
    let mut local = vec![usize::MAX; mdp.n_states()];
    for (i, &s) in states.iter().enumerate() {
        local[s] = i;
    }
    let mut a = DMatrix::<f64>::identity(k, k);
    for (i, &s) in states.iter().enumerate() {
        for &(s2, p) in &rows[s] {
            a[(local[s2], i)] -= gamma * p;
        }
    }
    let b = DVector::from_iterator(k, states.iter().map(|&s| (1.0 - gamma) * mdp.mu()[s]));
    let u = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Numerical("singular occupancy system".into()))?;
    let mut out = vec![0.0; mdp.n_states()];
    for (i, &s) in states.iter().enumerate() {
        // Round-off can leave values like -1e-18 on unreachable corners of the chain.
        out[s] = u[i].max(0.0);
    }
    Ok(out)
}

/// Exact normalized discounted occupancy `v(s,a) = π(a|s)·u(s)`.
pub fn exact_discounted_occupancy(mdp: &TabularMdp, policy: &PolicySnapshot) -> Result<OccupancyMeasure> {
    check_policy(mdp, policy)?;
    let u = discounted_state_occupancy(mdp, policy)?;
    let na = mdp.n_actions();
    let mut weights = vec![0.0; mdp.n_pairs()];
    for s in 0..mdp.n_states() {
        for a in 0..na {
            weights[s * na + a] = u[s] * policy.prob(s, a);
        }
    }
    OccupancyMeasure::normalized(
        mdp.n_states(),
        na,
        weights,
        OccupancyKind::ExactDiscounted { gamma: mdp.gamma() },
    )
}

fn propagate(mdp: &TabularMdp, policy: &PolicySnapshot, dist: &[f64]) -> Vec<f64> {
    let mut next = vec![0.0; dist.len()];
    for (s, &d) in dist.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        for a in 0..mdp.n_actions() {
            let p = d * policy.prob(s, a);
            if p == 0.0 {
                continue;
            }
            for &(s2, t) in mdp.successors(s, a) {
                next[s2] += p * t;
            }
        }
    }
    next
}

/// State marginals `q_1, …, q_{H+1}` with `q_1 = μ`.
pub fn state_marginals(mdp: &TabularMdp, policy: &PolicySnapshot, horizon: usize) -> Result<Vec<Vec<f64>>> {
    check_policy(mdp, policy)?;
    let mut out = Vec::with_capacity(horizon + 1);
    out.push(mdp.mu().to_vec());
    for t in 0..horizon {
        let next = propagate(mdp, policy, &out[t]);
        out.push(next);
    }
    Ok(out)
}

/// `v^H(s,a) = (1/H) Σ_{t=1..H} P(s_t = s, a_t = a)`.
pub fn exact_finite_horizon_occupancy(
    mdp: &TabularMdp,
    policy: &PolicySnapshot,
    horizon: usize,
) -> Result<OccupancyMeasure> {
    if horizon == 0 {
        return Err(Error::Usage("horizon must be at least 1".into()));
    }
    let marginals = state_marginals(mdp, policy, horizon - 1)?;
    let na = mdp.n_actions();
    let mut weights = vec![0.0; mdp.n_pairs()];
    for q in &marginals {
        for (s, &p) in q.iter().enumerate() {
            for a in 0..na {
                weights[s * na + a] += p * policy.prob(s, a) / horizon as f64;
            }
        }
    }
    OccupancyMeasure::normalized(
        mdp.n_states(),
        na,
        weights,
        OccupancyKind::ExactFiniteHorizon { horizon },
    )
}

/// Largest violation of the discounted flow constraint
/// `Σ_a v(s,a) = (1-γ)μ(s) + γ Σ_{s',a} T[s'][a][s] v(s',a)`.
pub fn bellman_flow_residual(mdp: &TabularMdp, occ: &OccupancyMeasure) -> f64 {
    let gamma = mdp.gamma();
    let mut inflow: Vec<f64> = mdp.mu().iter().map(|m| (1.0 - gamma) * m).collect();
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            let w = occ.weight(s, a);
            for &(s2, t) in mdp.successors(s, a) {
                inflow[s2] += gamma * t * w;
            }
        }
    }
    occ.state_marginal()
        .iter()
        .zip(&inflow)
        .map(|(l, r)| (l - r).abs())
        .fold(0.0, f64::max)
}

/// Largest violation of the finite-horizon flow constraint
/// `Σ_a v^H(s,a) = (μ(s) - q_{H+1}(s))/H + Σ_{s',a} T[s'][a][s] v^H(s',a)`.
///
/// The `q_{H+1}` boundary term is the probability of being in `s` one step past the horizon.
pub fn finite_horizon_flow_residual(
    mdp: &TabularMdp,
    policy: &PolicySnapshot,
    occ: &OccupancyMeasure,
    horizon: usize,
) -> Result<f64> {
    let marginals = state_marginals(mdp, policy, horizon)?;
    let beyond = &marginals[horizon];
    let h = horizon as f64;
    let mut rhs: Vec<f64> = mdp.mu().iter().zip(beyond).map(|(m, q)| (m - q) / h).collect();
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            let w = occ.weight(s, a);
            for &(s2, t) in mdp.successors(s, a) {
                rhs[s2] += t * w;
            }
        }
    }
    Ok(occ
        .state_marginal()
        .iter()
        .zip(&rhs)
        .map(|(l, r)| (l - r).abs())
        .fold(0.0, f64::max))
}

/// Normalized expected visits to each pair before the episode terminates or hits `cap` steps.
///
/// This is the population counterpart of the sample frequencies in a rollout dataset.
pub fn exact_episode_visitation(mdp: &TabularMdp, policy: &PolicySnapshot, cap: usize) -> Result<OccupancyMeasure> {
    check_policy(mdp, policy)?;
    let na = mdp.n_actions();
    let mut weights = vec![0.0; mdp.n_pairs()];
    let mut dist: Vec<f64> = mdp
        .mu()
        .iter()
        .enumerate()
        .map(|(s, m)| if mdp.is_terminal(s) { 0.0 } else { *m })
        .collect();
    for _ in 0..cap {
        for (s, &d) in dist.iter().enumerate() {
            for a in 0..na {
                weights[s * na + a] += d * policy.prob(s, a);
            }
        }
        let mut next = propagate(mdp, policy, &dist);
        for &g in mdp.goal_states() {
            next[g] = 0.0;
        }
        dist = next;
    }
    OccupancyMeasure::normalized(mdp.n_states(), na, weights, OccupancyKind::ExactEpisode { cap })
}

/// What an episode that entered the goal contributes at later time steps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PostTermination {
    /// Keep emitting the terminal pair `(goal, 0)`.
    #[default]
    Absorb,
    /// Drop the episode; later time steps average over the surviving episodes only.
    Truncate,
}

/// Time-weighted empirical distribution of the pairs in `rollouts` over `t = 0..=last_t`.
///
/// Time steps at which no episode has data are skipped and the time weights renormalized.
fn time_weighted_empirical(
    rollouts: &[Rollout],
    n_states: usize,
    n_actions: usize,
    last_t: usize,
    mode: PostTermination,
    time_weight: impl Fn(usize) -> f64,
    kind: OccupancyKind,
) -> Result<OccupancyMeasure> {
    if rollouts.is_empty() {
        return Err(Error::Usage("empirical occupancy needs at least one rollout".into()));
    }
    let horizon = last_t + 1;
    let absorbs = |r: &Rollout| mode == PostTermination::Absorb && r.terminated_at_goal;
    // alive[t] = number of episodes with a pair at time t.
    let mut ends = vec![0usize; horizon + 1];
    for r in rollouts {
        ends[if absorbs(r) { horizon } else { r.len().min(horizon) }] += 1;
    }
    let mut alive = vec![0usize; horizon];
    let mut remaining = rollouts.len();
    for t in 0..horizon {
        remaining -= ends[t];
        alive[t] = remaining;
    }
    let per_sample: Vec<f64> = (0..horizon)
        .map(|t| {
            if alive[t] > 0 {
                time_weight(t) / alive[t] as f64
            } else {
                0.0
            }
        })
        .collect();
    // tail[t] = Σ_{t' ≥ t} per_sample[t'].
    let mut tail = vec![0.0; horizon + 1];
    for t in (0..horizon).rev() {
        tail[t] = tail[t + 1] + per_sample[t];
    }
    let mut weights = vec![0.0; n_states * n_actions];
    for r in rollouts {
        for (t, step) in r.steps.iter().take(horizon).enumerate() {
            if step.state >= n_states || step.action >= n_actions {
                return Err(Error::Usage(format!(
                    "rollout pair ({}, {}) out of range",
                    step.state, step.action
                )));
            }
            weights[step.state * n_actions + step.action] += per_sample[t];
        }
        if absorbs(r) && r.len() < horizon {
            // Episodes that start in the goal have no steps to name the terminal state.
            let goal = r
                .final_state()
                .ok_or_else(|| Error::Usage("terminated rollout without steps".into()))?;
            weights[goal * n_actions] += tail[r.len()];
        }
    }
    OccupancyMeasure::normalized(n_states, n_actions, weights, kind)
}

/// Truncated discounted estimate `ρ_T Σ_{t=0..T} γ^t μ̂_t` from sampled episodes.
pub fn empirical_occupancy(
    rollouts: &[Rollout],
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    truncation: usize,
    mode: PostTermination,
) -> Result<OccupancyMeasure> {
    time_weighted_empirical(
        rollouts,
        n_states,
        n_actions,
        truncation,
        mode,
        |t| gamma.powi(t as i32),
        OccupancyKind::EmpiricalDiscounted {
            gamma,
            truncation,
            rollouts: rollouts.len(),
        },
    )
}

/// Uniform-in-time estimate of `v^H` from sampled episodes.
pub fn empirical_finite_horizon_occupancy(
    rollouts: &[Rollout],
    n_states: usize,
    n_actions: usize,
    horizon: usize,
    mode: PostTermination,
) -> Result<OccupancyMeasure> {
    if horizon == 0 {
        return Err(Error::Usage("horizon must be at least 1".into()));
    }
    time_weighted_empirical(
        rollouts,
        n_states,
        n_actions,
        horizon - 1,
        mode,
        |_| 1.0,
        OccupancyKind::EmpiricalFiniteHorizon {
            horizon,
            rollouts: rollouts.len(),
        },
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DatasetSource {
    Rollouts { episodes: usize, cap: usize },
    ExactWeighted,
}

/// A weighted multiset of `(state, action)` samples.
///
/// Rollout datasets carry unit weights; exact-weighted datasets carry the occupancy mass of each pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyDataset {
    samples: Vec<(usize, usize)>,
    weights: Vec<f64>,
    n_states: usize,
    n_actions: usize,
    pub source: DatasetSource,
}

impl PolicyDataset {
    pub fn from_samples(
        n_states: usize,
        n_actions: usize,
        samples: Vec<(usize, usize)>,
        weights: Vec<f64>,
        source: DatasetSource,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Usage("policy dataset is empty".into()));
        }
        if weights.len() != samples.len() || weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::Usage("dataset weights must be positive, one per sample".into()));
        }
        if let Some((s, a)) = samples.iter().find(|(s, a)| *s >= n_states || *a >= n_actions) {
            return Err(Error::Usage(format!("dataset pair ({s}, {a}) out of range")));
        }
        Ok(Self {
            samples,
            weights,
            n_states,
            n_actions,
            source,
        })
    }

    /// One sample per pair with positive mass, weighted by that mass.
    pub fn from_occupancy(occ: &OccupancyMeasure) -> Result<Self> {
        let na = occ.n_actions();
        let (samples, weights) = occ.support().map(|(i, w)| ((i / na, i % na), w)).unzip();
        Self::from_samples(occ.n_states(), na, samples, weights, DatasetSource::ExactWeighted)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[(usize, usize)] {
        &self.samples
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// Distinct pairs with their normalized total weight, sorted by pair.
    pub fn atoms(&self) -> Vec<((usize, usize), f64)> {
        let total: f64 = self.weights.iter().sum();
        let mut acc: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (pair, w) in self.samples.iter().zip(&self.weights) {
            *acc.entry(*pair).or_insert(0.0) += w;
        }
        acc.into_iter().map(|(p, w)| (p, w / total)).collect()
    }

    /// Actions occurring in the dataset, sorted.
    pub fn labels(&self) -> Vec<usize> {
        let mut labels: Vec<usize> = self.samples.iter().map(|p| p.1).collect();
        labels.sort_unstable();
        labels.dedup();
        labels
    }

    /// Sample frequencies as an occupancy measure.
    pub fn to_occupancy(&self) -> Result<OccupancyMeasure> {
        let mut weights = vec![0.0; self.n_states * self.n_actions];
        for ((s, a), w) in self.atoms() {
            weights[s * self.n_actions + a] = w;
        }
        OccupancyMeasure::normalized(
            self.n_states,
            self.n_actions,
            weights,
            OccupancyKind::Dataset { samples: self.len() },
        )
    }
}

/// Flattens every `(state, action)` of `rollouts`, preserving multiplicity.
pub fn dataset_from_rollouts(rollouts: &[Rollout], n_states: usize, n_actions: usize) -> Result<PolicyDataset> {
    if rollouts.is_empty() {
        return Err(Error::Usage("dataset needs at least one rollout".into()));
    }
    let samples: Vec<(usize, usize)> = rollouts
        .iter()
        .flat_map(|r| r.steps.iter().map(|t| (t.state, t.action)))
        .collect();
    let cap = rollouts.iter().map(Rollout::len).max().unwrap_or(0);
    let weights = vec![1.0; samples.len()];
    PolicyDataset::from_samples(
        n_states,
        n_actions,
        samples,
        weights,
        DatasetSource::Rollouts {
            episodes: rollouts.len(),
            cap,
        },
    )
}

/// Mean episode length and mean undiscounted return.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMoments {
    pub mean_length: f64,
    pub mean_return: f64,
}

impl EpisodeMoments {
    pub fn from_rollouts(rollouts: &[Rollout]) -> Result<Self> {
        if rollouts.is_empty() {
            return Err(Error::Usage("episode moments need at least one rollout".into()));
        }
        let n = rollouts.len() as f64;
        Ok(Self {
            mean_length: rollouts.iter().map(|r| r.len() as f64).sum::<f64>() / n,
            mean_return: rollouts.iter().map(Rollout::total_reward).sum::<f64>() / n,
        })
    }

    /// Exact moments for episodes capped at `cap` steps.
    pub fn exact(mdp: &TabularMdp, policy: &PolicySnapshot, cap: usize) -> Result<Self> {
        check_policy(mdp, policy)?;
        let na = mdp.n_actions();
        let mut dist: Vec<f64> = mdp
            .mu()
            .iter()
            .enumerate()
            .map(|(s, m)| if mdp.is_terminal(s) { 0.0 } else { *m })
            .collect();
        let (mut len, mut ret) = (0.0, 0.0);
        for _ in 0..cap {
            for (s, &d) in dist.iter().enumerate() {
                len += d;
                for a in 0..na {
                    ret += d * policy.prob(s, a) * mdp.reward(s, a);
                }
            }
            let mut next = propagate(mdp, policy, &dist);
            for &g in mdp.goal_states() {
                next[g] = 0.0;
            }
            dist = next;
        }
        Ok(Self {
            mean_length: len,
            mean_return: ret,
        })
    }
}

/// Percent relative error `100·(E_v[R̄]·E[H] − E[ΣR]) / E[ΣR]`; `None` when the mean return is zero.
pub fn stationarity_rel_error_with(mdp: &TabularMdp, occ: &OccupancyMeasure, moments: &EpisodeMoments) -> Option<f64> {
    if moments.mean_return == 0.0 {
        return None;
    }
    let expected_reward = occ.expectation(mdp.rewards());
    Some(100.0 * (expected_reward * moments.mean_length - moments.mean_return) / moments.mean_return)
}

/// [`stationarity_rel_error_with`] using moments estimated from `eval_rollouts`.
pub fn stationarity_rel_error(
    mdp: &TabularMdp,
    occ: &OccupancyMeasure,
    eval_rollouts: &[Rollout],
) -> Result<Option<f64>> {
    let moments = EpisodeMoments::from_rollouts(eval_rollouts)?;
    Ok(stationarity_rel_error_with(mdp, occ, &moments))
}

/// `J = E_{(s,a)~v}[R̄(s,a)] / (1-γ)`.
pub fn policy_value(mdp: &TabularMdp, policy: &PolicySnapshot) -> Result<f64> {
    let occ = exact_discounted_occupancy(mdp, policy)?;
    Ok(occ.expectation(mdp.rewards()) / (1.0 - mdp.gamma()))
}

/// `E_{s~μ}[V_π(s)]` from the linear system `(I - γ P^π) V = r^π`.
pub fn policy_value_direct(mdp: &TabularMdp, policy: &PolicySnapshot) -> Result<f64> {
    let v = policy_state_values(mdp, policy)?;
    Ok(v.iter().zip(mdp.mu()).map(|(v, m)| v * m).sum())
}

/// `V_π` over all states.
pub fn policy_state_values(mdp: &TabularMdp, policy: &PolicySnapshot) -> Result<Vec<f64>> {
    check_policy(mdp, policy)?;
    let n = mdp.n_states();
    let na = mdp.n_actions();
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut r = DVector::<f64>::zeros(n);
    for s in 0..n {
        for (s2, p) in state_chain(mdp, policy, s) {
            a[(s, s2)] -= mdp.gamma() * p;
        }
        r[s] = (0..na).map(|act| policy.prob(s, act) * mdp.reward(s, act)).sum();
    }
    let v = a
        .lu()
        .solve(&r)
        .ok_or_else(|| Error::Numerical("singular policy evaluation system".into()))?;
    Ok(v.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{build_gridworld, rollout, GridworldSpec, MdpParts, RewardKind, DOWN, RIGHT};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn chain(gamma: f64) -> TabularMdp {
        // s0 -> s1 under every action, s1 absorbing.
        TabularMdp::new(MdpParts {
            n_states: 2,
            n_actions: 2,
            transition: vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0],
            reward: vec![1.0, 0.5, 0.0, 0.0],
            gamma,
            mu: vec![1.0, 0.0],
            max_steps: 5,
            goal_states: vec![1],
            state_coords: vec![vec![0], vec![1]],
        })
        .unwrap()
    }

    #[test]
    fn single_pair_gets_all_mass() {
        let mdp = TabularMdp::new(MdpParts {
            n_states: 1,
            n_actions: 1,
            transition: vec![1.0],
            reward: vec![1.0],
            gamma: 0.9,
            mu: vec![1.0],
            max_steps: 1,
            goal_states: vec![],
            state_coords: vec![vec![0]],
        })
        .unwrap();
        let occ = exact_discounted_occupancy(&mdp, &PolicySnapshot::uniform(1, 1)).unwrap();
        assert_eq!(occ.weights(), &[1.0]);
    }

    #[test]
    fn two_state_chain_matches_geometric_series() {
        let mdp = chain(0.5);
        let pi = PolicySnapshot::new(2, 2, vec![0.25, 0.75, 1.0, 0.0]).unwrap();
        let occ = exact_discounted_occupancy(&mdp, &pi).unwrap();
        // u(s0) = (1-γ)·1, u(s1) = (1-γ)·Σ_{t≥1} γ^t.
        let mut u1 = 0.0;
        for t in 1..200 {
            u1 += 0.5f64.powi(t);
        }
        let u = [0.5, 0.5 * u1];
        assert!((occ.weight(0, 0) - u[0] * 0.25).abs() < 1e-12);
        assert!((occ.weight(0, 1) - u[0] * 0.75).abs() < 1e-12);
        assert!((occ.weight(1, 0) - u[1]).abs() < 1e-12);
        assert!(bellman_flow_residual(&mdp, &occ) < 1e-12);
    }

    #[test]
    fn finite_horizon_single_step_is_initial_marginal() {
        let mdp = chain(0.5);
        let pi = PolicySnapshot::new(2, 2, vec![0.25, 0.75, 1.0, 0.0]).unwrap();
        let occ = exact_finite_horizon_occupancy(&mdp, &pi, 1).unwrap();
        assert_eq!(occ.weights(), &[0.25, 0.75, 0.0, 0.0]);
        let occ = exact_finite_horizon_occupancy(&mdp, &pi, 4).unwrap();
        assert!((occ.weight(1, 0) - 0.75).abs() < 1e-15);
        assert!(finite_horizon_flow_residual(&mdp, &pi, &occ, 4).unwrap() < 1e-12);
        assert!(exact_finite_horizon_occupancy(&mdp, &pi, 0).is_err());
    }

    #[test]
    fn empirical_matches_exact_on_deterministic_path() {
        let spec = GridworldSpec::corner_to_corner(5, RewardKind::Dense);
        let mdp = build_gridworld(&spec).unwrap();
        let mut actions = vec![RIGHT; 25];
        for y in 0..5 {
            actions[spec.state_index((4, y))] = DOWN;
        }
        let pi = PolicySnapshot::deterministic(4, &actions)
            .unwrap()
            .with_terminal_convention(&mdp);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ep = rollout(&mdp, &pi, &mut rng).unwrap();
        // A truncation far beyond the episode makes the tail negligible.
        let emp = empirical_occupancy(
            std::slice::from_ref(&ep),
            25,
            4,
            mdp.gamma(),
            400,
            PostTermination::Absorb,
        )
        .unwrap();
        let exact = exact_discounted_occupancy(&mdp, &pi).unwrap();
        assert!(emp.total_variation(&exact) < 1e-12);
        let support: Vec<usize> = emp.support().map(|x| x.0).collect();
        let mut visited: Vec<usize> = ep.steps.iter().map(|t| t.state * 4 + t.action).collect();
        visited.push(mdp.goal_states()[0] * 4);
        visited.sort_unstable();
        assert_eq!(support, visited);
    }

    #[test]
    fn truncate_mode_drops_finished_episodes() {
        let mdp = chain(0.5);
        let pi = PolicySnapshot::new(2, 2, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ep = rollout(&mdp, &pi, &mut rng).unwrap();
        let occ = empirical_occupancy(std::slice::from_ref(&ep), 2, 2, 0.5, 5, PostTermination::Truncate).unwrap();
        assert_eq!(occ.weights(), &[1.0, 0.0, 0.0, 0.0]);
        let occ = empirical_occupancy(&[ep], 2, 2, 0.5, 1, PostTermination::Absorb).unwrap();
        assert!((occ.weight(0, 0) - 1.0 / 1.5).abs() < 1e-15);
        assert!(empirical_occupancy(&[], 2, 2, 0.5, 1, PostTermination::Absorb).is_err());
    }

    #[test]
    fn dataset_counts_every_step() {
        let spec = GridworldSpec::corner_to_corner(5, RewardKind::Dense);
        let mdp = build_gridworld(&spec).unwrap();
        let (pi, _) = crate::mdp::value_iteration(&mdp, 1e-10);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let eps: Vec<Rollout> = (0..3).map(|_| rollout(&mdp, &pi, &mut rng).unwrap()).collect();
        let ds = dataset_from_rollouts(&eps[..1], 25, 4).unwrap();
        assert_eq!(ds.len(), 8);
        let ds = dataset_from_rollouts(&eps, 25, 4).unwrap();
        assert_eq!(ds.len(), 24);
        assert_eq!(&ds.samples()[..8], &ds.samples()[8..16]);
        assert!(dataset_from_rollouts(&[], 25, 4).is_err());
    }

    #[test]
    fn stationarity_identity_is_exact_for_episode_visitation() {
        let mdp = chain(0.5);
        let pi = PolicySnapshot::new(2, 2, vec![0.25, 0.75, 1.0, 0.0]).unwrap();
        let occ = exact_episode_visitation(&mdp, &pi, mdp.max_steps()).unwrap();
        let moments = EpisodeMoments::exact(&mdp, &pi, mdp.max_steps()).unwrap();
        assert_eq!(moments.mean_length, 1.0);
        let err = stationarity_rel_error_with(&mdp, &occ, &moments).unwrap();
        assert!(err.abs() < 1e-9);
        let zero = EpisodeMoments {
            mean_length: 1.0,
            mean_return: 0.0,
        };
        assert_eq!(stationarity_rel_error_with(&mdp, &occ, &zero), None);
    }

    #[test]
    fn value_routes_agree_on_constant_reward() {
        let mdp = TabularMdp::new(MdpParts {
            n_states: 2,
            n_actions: 1,
            transition: vec![0.3, 0.7, 0.6, 0.4],
            reward: vec![2.0, 2.0],
            gamma: 0.8,
            mu: vec![0.5, 0.5],
            max_steps: 10,
            goal_states: vec![],
            state_coords: vec![vec![0], vec![1]],
        })
        .unwrap();
        let pi = PolicySnapshot::uniform(2, 1);
        assert!((policy_value(&mdp, &pi).unwrap() - 10.0).abs() < 1e-10);
        assert!((policy_value_direct(&mdp, &pi).unwrap() - 10.0).abs() < 1e-10);
    }
}
