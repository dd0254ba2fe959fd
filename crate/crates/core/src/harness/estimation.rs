use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{rollout_capped, Rollout, TabularMdp};
use crate::occupancy::{
    empirical_occupancy, exact_discounted_occupancy, OccupancyMeasure, PolicyDataset, PostTermination,
};
use crate::policy::PolicySnapshot;
use crate::transport::{otdd, wasserstein1, GroundMetric};

/// Distance used on both the exact and the estimated occupancies.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    #[default]
    W1,
    Otdd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationConfig {
    /// Rollouts per policy, increasing.
    pub m_grid: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Last time step kept by the truncated estimator; rollouts are capped here too.
    pub truncation: usize,
    pub estimator: Estimator,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationRow {
    pub m: usize,
    /// Mean absolute error over seeds and policy pairs.
    pub mean_error: f64,
    pub std_error: f64,
    /// Upper bound on the expected error, averaged over pairs.
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationTable {
    pub rows: Vec<EstimationRow>,
    /// Least-squares slope of `ln(mean_error)` against `ln(M)`.
    pub slope: f64,
    pub intercept: f64,
    pub diameter: f64,
    /// Truncation term `γ^{T+1}·diam`.
    pub tail: f64,
}

/// Least-squares line through `(x, y)`; returns `(slope, intercept)`.
pub fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

fn distance(a: &OccupancyMeasure, b: &OccupancyMeasure, estimator: Estimator, metric: &GroundMetric) -> Result<f64> {
    match estimator {
        Estimator::W1 => Ok(wasserstein1(a, b, metric)?.0),
        Estimator::Otdd => otdd(
            &PolicyDataset::from_occupancy(a)?,
            &PolicyDataset::from_occupancy(b)?,
            metric,
        ),
    }
}

/// Error of sampled occupancy distances against exact ones as the rollout count grows.
///
/// For every `M`, seed and pair, `M` capped episodes of each policy give truncated
/// discounted estimates whose distance is compared with the distance of the exact
/// occupancies. Goal-state rows are canonicalized first. The bound column is
/// `2·𝓔₂/√M + γ^{T+1}·diam` with the crude constant `𝓔₂ = diam·√K/2`, `K` being the
/// support size of the exact occupancy.
pub fn estimation_error_experiment(
    mdp: &TabularMdp,
    pairs: &[(PolicySnapshot, PolicySnapshot)],
    cfg: &EstimationConfig,
    metric: &GroundMetric,
) -> Result<EstimationTable> {
    if pairs.is_empty() || cfg.seeds.is_empty() || cfg.m_grid.is_empty() {
        return Err(Error::Usage(
            "estimation needs policy pairs, seeds and rollout counts".into(),
        ));
    }
    if cfg.m_grid.windows(2).any(|w| w[0] >= w[1]) || cfg.m_grid[0] == 0 {
        return Err(Error::Usage("rollout counts must be positive and increasing".into()));
    }
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    // Sampled episodes record the goal as `(goal, 0)`, so the exact side must agree.
    let pairs: Vec<(PolicySnapshot, PolicySnapshot)> = pairs
        .iter()
        .map(|(p, q)| {
            (
                p.clone().with_terminal_convention(mdp),
                q.clone().with_terminal_convention(mdp),
            )
        })
        .collect();
    let exact: Vec<(OccupancyMeasure, OccupancyMeasure, f64)> = pairs
        .iter()
        .map(|(p, q)| {
            let a = exact_discounted_occupancy(mdp, p)?;
            let b = exact_discounted_occupancy(mdp, q)?;
            let d = distance(&a, &b, cfg.estimator, metric)?;
            Ok((a, b, d))
        })
        .collect::<Result<_>>()?;
    let diameter = metric.diameter();
    let tail = mdp.gamma().powi(cfg.truncation as i32 + 1) * diameter;

    let sample = |policy: &PolicySnapshot, m: usize, rng: &mut ChaCha8Rng| -> Result<OccupancyMeasure> {
        let eps: Vec<Rollout> = (0..m)
            .map(|_| rollout_capped(mdp, policy, cfg.truncation, rng))
            .collect::<Result<_>>()?;
        empirical_occupancy(&eps, ns, na, mdp.gamma(), cfg.truncation, PostTermination::Absorb)
    };

    let mut rows = Vec::with_capacity(cfg.m_grid.len());
    for &m in &cfg.m_grid {
        let jobs: Vec<(usize, u64)> = (0..pairs.len())
            .flat_map(|i| cfg.seeds.iter().map(move |&s| (i, s)))
            .collect();
        let errors: Vec<f64> = jobs
            .par_iter()
            .map(|&(i, seed)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((m as u64) << 32) ^ ((i as u64) << 48));
                let a = sample(&pairs[i].0, m, &mut rng)?;
                let b = sample(&pairs[i].1, m, &mut rng)?;
                Ok((distance(&a, &b, cfg.estimator, metric)? - exact[i].2).abs())
            })
            .collect::<Result<_>>()?;
        let n = errors.len() as f64;
        let mean = errors.iter().sum::<f64>() / n;
        let var = if errors.len() > 1 {
            errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let bound = exact
            .iter()
            .map(|(a, b, _)| {
                let k = |o: &OccupancyMeasure| (o.support().count() as f64).sqrt();
                diameter / 2.0 * (k(a) + k(b)) / (m as f64).sqrt() + tail
            })
            .sum::<f64>()
            / exact.len() as f64;
        rows.push(EstimationRow {
            m,
            mean_error: mean,
            std_error: var.sqrt(),
            bound,
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| (r.m as f64).ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.mean_error.max(f64::MIN_POSITIVE).ln()).collect();
    let (slope, intercept) = if rows.len() > 1 {
        fit_line(&xs, &ys)
    } else {
        (f64::NAN, ys[0])
    };
    Ok(EstimationTable {
        rows,
        slope,
        intercept,
        diameter,
        tail,
    })
}
