//! Exact 1-Wasserstein distances and the nested dataset distance.

mod otdd;
mod pairwise;
mod simplex;

pub use otdd::{label_feature_distribution, otdd, OtddSolver};
pub use pairwise::{pairwise_distance_matrix, DistanceMatrix, PairSelection};
pub use simplex::{solve_transport, TransportSolution};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::occupancy::{OccupancyMeasure, NORMALIZATION_TOL};

/// `d_SA((s,a),(s',a')) = ‖coords(s) − coords(s')‖₁ + scale·[a ≠ a']`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundMetric {
    state_coords: Vec<Vec<i64>>,
    n_actions: usize,
    action_scale: f64,
}

impl GroundMetric {
    pub fn new(state_coords: Vec<Vec<i64>>, n_actions: usize, action_scale: f64) -> Result<Self> {
        if !(action_scale >= 0.0) || !action_scale.is_finite() {
            return Err(Error::Usage(format!(
                "action distance scale {action_scale} must be finite and nonnegative"
            )));
        }
        if let Some(first) = state_coords.first() {
            if state_coords.iter().any(|c| c.len() != first.len()) {
                return Err(Error::Usage("state coordinates must share one dimension".into()));
            }
        }
        Ok(Self {
            state_coords,
            n_actions,
            action_scale,
        })
    }

    /// Manhattan state distance with unit discrete action distance.
    pub fn for_mdp(mdp: &TabularMdp) -> Self {
        Self {
            state_coords: mdp.state_coords().to_vec(),
            n_actions: mdp.n_actions(),
            action_scale: 1.0,
        }
    }

    pub fn with_action_scale(mut self, scale: f64) -> Self {
        self.action_scale = scale;
        self
    }

    pub fn n_states(&self) -> usize {
        self.state_coords.len()
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_pairs(&self) -> usize {
        self.state_coords.len() * self.n_actions
    }

    pub fn action_scale(&self) -> f64 {
        self.action_scale
    }

    pub fn state_distance(&self, s: usize, t: usize) -> f64 {
        self.state_coords[s]
            .iter()
            .zip(&self.state_coords[t])
            .map(|(a, b)| (a - b).abs())
            .sum::<i64>() as f64
    }

    pub fn action_distance(&self, a: usize, b: usize) -> f64 {
        if a == b {
            0.0
        } else {
            self.action_scale
        }
    }

    /// Distance between pair indices `s * n_actions + a`.
    pub fn pair_cost(&self, p: usize, q: usize) -> f64 {
        let na = self.n_actions;
        self.state_distance(p / na, q / na) + self.action_distance(p % na, q % na)
    }

    /// Largest pair distance over the whole state-action space.
    pub fn diameter(&self) -> f64 {
        let n = self.n_states();
        let mut best: f64 = 0.0;
        for s in 0..n {
            for t in s..n {
                best = best.max(self.state_distance(s, t));
            }
        }
        best + if self.n_actions > 1 { self.action_scale } else { 0.0 }
    }
}

/// A coupling between two discrete measures, stored sparsely.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    /// `(source index, target index, mass)` in the index space of the inputs.
    pub coupling: Vec<(usize, usize, f64)>,
    pub objective: f64,
    pub n_sources: usize,
    pub n_targets: usize,
}

impl TransportPlan {
    pub fn dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.n_targets]; self.n_sources];
        for &(i, j, w) in &self.coupling {
            out[i][j] += w;
        }
        out
    }

    pub fn source_marginal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_sources];
        for &(i, _, w) in &self.coupling {
            out[i] += w;
        }
        out
    }

    pub fn target_marginal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_targets];
        for &(_, j, w) in &self.coupling {
            out[j] += w;
        }
        out
    }
}

/// Exact W1 between two measures on a common index space whose cost is a metric.
///
/// Mass shared by both measures stays in place; only the excess is transported.
pub(crate) fn metric_w1(mu: &[f64], nu: &[f64], cost: impl Fn(usize, usize) -> f64) -> Result<TransportPlan> {
    let n = mu.len();
    let mut coupling = Vec::new();
    let mut sources = Vec::new();
    let mut sinks = Vec::new();
    for i in 0..n {
        let shared = mu[i].min(nu[i]);
        if shared > 0.0 {
            coupling.push((i, i, shared));
        }
        if mu[i] - shared > 0.0 {
            sources.push((i, mu[i] - shared));
        }
        if nu[i] - shared > 0.0 {
            sinks.push((i, nu[i] - shared));
        }
    }
    let mut objective = 0.0;
    if !sources.is_empty() && !sinks.is_empty() {
        let supply: Vec<f64> = sources.iter().map(|x| x.1).collect();
        let mut demand: Vec<f64> = sinks.iter().map(|x| x.1).collect();
        // Inputs are normalized only up to rounding; match the totals exactly enough for the solver.
        let ratio = supply.iter().sum::<f64>() / demand.iter().sum::<f64>();
        demand.iter_mut().for_each(|d| *d *= ratio);
        let mut c = Vec::with_capacity(supply.len() * demand.len());
        for &(i, _) in &sources {
            for &(j, _) in &sinks {
                c.push(cost(i, j));
            }
        }
        let sol = solve_transport(&supply, &demand, &c)?;
        objective = sol.objective;
        for (a, b, w) in sol.flows {
            coupling.push((sources[a].0, sinks[b].0, w));
        }
    }
    Ok(TransportPlan {
        coupling,
        objective,
        n_sources: n,
        n_targets: n,
    })
}

fn check_normalized(w: &[f64], name: &str) -> Result<()> {
    if w.iter().any(|x| !(*x >= 0.0)) {
        return Err(Error::Usage(format!("{name} has negative or NaN mass")));
    }
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::Usage(format!("{name} is not normalized (total mass {total})")));
    }
    Ok(())
}

/// Exact `W₁(μ, ν)` under the ground metric, with an optimal plan.
pub fn wasserstein1(
    mu: &OccupancyMeasure,
    nu: &OccupancyMeasure,
    metric: &GroundMetric,
) -> Result<(f64, TransportPlan)> {
    let n = metric.n_pairs();
    if mu.weights().len() != n || nu.weights().len() != n || mu.n_actions() != metric.n_actions() {
        return Err(Error::Usage(format!(
            "measures over {} and {} pairs do not match a metric over {n} pairs",
            mu.weights().len(),
            nu.weights().len()
        )));
    }
    check_normalized(mu.weights(), "source measure")?;
    check_normalized(nu.weights(), "target measure")?;
    let plan = metric_w1(mu.weights(), nu.weights(), |p, q| metric.pair_cost(p, q))?;
    Ok((plan.objective, plan))
}

/// W1 between two distributions over states under the state part of the metric.
pub fn state_wasserstein1(alpha: &[(usize, f64)], beta: &[(usize, f64)], metric: &GroundMetric) -> Result<f64> {
    let n = metric.n_states();
    let mut mu = vec![0.0; n];
    let mut nu = vec![0.0; n];
    for &(s, w) in alpha {
        mu[s] += w;
    }
    for &(s, w) in beta {
        nu[s] += w;
    }
    Ok(metric_w1(&mu, &nu, |s, t| metric.state_distance(s, t))?.objective)
}
