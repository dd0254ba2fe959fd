//! Nested optimal transport distance between labelled policy datasets.
//!
//! States are features and actions are labels: each action is lifted to the distribution of
//! states it was taken in, and label-to-label cost is the W1 between those distributions.

use std::collections::HashMap;

use super::{solve_transport, state_wasserstein1, GroundMetric};
use crate::error::{Error, Result};
use crate::occupancy::PolicyDataset;

/// `α_a(S) = P̂(S | A = a)` as `(state, probability)` sorted by state.
pub fn label_feature_distribution(dataset: &PolicyDataset, action: usize) -> Result<Vec<(usize, f64)>> {
    let atoms: Vec<(usize, f64)> = dataset
        .atoms()
        .into_iter()
        .filter(|((_, a), _)| *a == action)
        .map(|((s, _), w)| (s, w))
        .collect();
    let total: f64 = atoms.iter().map(|x| x.1).sum();
    if atoms.is_empty() {
        return Err(Error::Usage(format!("action {action} does not occur in the dataset")));
    }
    Ok(atoms.into_iter().map(|(s, w)| (s, w / total)).collect())
}

/// OTDD with a cache of label-pair distances keyed by the label-conditional distributions.
///
/// Reusing one solver across many dataset pairs avoids recomputing inner distances between
/// label distributions that recur, e.g. along a slowly changing policy trajectory.
#[derive(Default)]
pub struct OtddSolver {
    inner: HashMap<(Vec<(usize, u64)>, Vec<(usize, u64)>), f64>,
}

fn key(dist: &[(usize, f64)]) -> Vec<(usize, u64)> {
    dist.iter().map(|&(s, w)| (s, w.to_bits())).collect()
}

impl OtddSolver {
    pub fn new() -> Self {
        Self::default()
    }

    fn label_distance(&mut self, a: &[(usize, f64)], b: &[(usize, f64)], metric: &GroundMetric) -> Result<f64> {
        let (ka, kb) = (key(a), key(b));
        if ka == kb {
            return Ok(0.0);
        }
        let k = if ka <= kb { (ka, kb) } else { (kb, ka) };
        if let Some(d) = self.inner.get(&k) {
            return Ok(*d);
        }
        let d = state_wasserstein1(a, b, metric)?;
        self.inner.insert(k, d);
        Ok(d)
    }

    pub fn distance(&mut self, ds_a: &PolicyDataset, ds_b: &PolicyDataset, metric: &GroundMetric) -> Result<f64> {
        if ds_a.is_empty() || ds_b.is_empty() {
            return Err(Error::Usage("OTDD needs nonempty datasets".into()));
        }
        if ds_a.n_states() != metric.n_states() || ds_b.n_states() != metric.n_states() {
            return Err(Error::Usage("dataset state space does not match the metric".into()));
        }
        let atoms_a = ds_a.atoms();
        let atoms_b = ds_b.atoms();
        if atoms_a == atoms_b {
            return Ok(0.0);
        }
        let labels_a = ds_a.labels();
        let labels_b = ds_b.labels();
        let alpha_a: Vec<Vec<(usize, f64)>> = labels_a
            .iter()
            .map(|&a| label_feature_distribution(ds_a, a))
            .collect::<Result<_>>()?;
        let alpha_b: Vec<Vec<(usize, f64)>> = labels_b
            .iter()
            .map(|&a| label_feature_distribution(ds_b, a))
            .collect::<Result<_>>()?;
        let mut label_cost = vec![0.0; labels_a.len() * labels_b.len()];
        for (i, da) in alpha_a.iter().enumerate() {
            for (j, db) in alpha_b.iter().enumerate() {
                label_cost[i * labels_b.len() + j] = self.label_distance(da, db, metric)?;
            }
        }
        let slot_a = |a: usize| labels_a.binary_search(&a).expect("label present");
        let slot_b = |a: usize| labels_b.binary_search(&a).expect("label present");
        let mut cost = Vec::with_capacity(atoms_a.len() * atoms_b.len());
        for &((s, a), _) in &atoms_a {
            for &((t, b), _) in &atoms_b {
                cost.push(metric.state_distance(s, t) + label_cost[slot_a(a) * labels_b.len() + slot_b(b)]);
            }
        }
        let supply: Vec<f64> = atoms_a.iter().map(|x| x.1).collect();
        let mut demand: Vec<f64> = atoms_b.iter().map(|x| x.1).collect();
        let ratio = supply.iter().sum::<f64>() / demand.iter().sum::<f64>();
        demand.iter_mut().for_each(|d| *d *= ratio);
        Ok(solve_transport(&supply, &demand, &cost)?.objective)
    }
}

/// Nested W1 between datasets with joint cost `d_S(s,s') + W₁(α_a, α'_a')`.
pub fn otdd(ds_a: &PolicyDataset, ds_b: &PolicyDataset, metric: &GroundMetric) -> Result<f64> {
    OtddSolver::new().distance(ds_a, ds_b, metric)
}
