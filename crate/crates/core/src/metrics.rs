//! Trajectory geometry in occupancy space and the efficiency indices built on it.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{lipschitz_constant_with, rollout, Rollout, TabularMdp};
use crate::occupancy::{dataset_from_rollouts, exact_discounted_occupancy, OccupancyMeasure, PolicyDataset};
use crate::policy::{PolicySnapshot, PolicyTrace};
use crate::transport::{wasserstein1, GroundMetric, OtddSolver};

/// Distances at or below this are treated as zero in denominators.
pub const DISTANCE_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    OptimalPolicy,
    FinalPolicy,
}

/// How distances between policies are measured.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Backend {
    /// Exact W1 between exact discounted occupancies.
    ExactW1,
    /// OTDD between datasets of `rollouts` sampled episodes per policy.
    Otdd { rollouts: usize, seed: u64 },
}

impl Backend {
    pub fn name(&self) -> &'static str {
        match self {
            Backend::ExactW1 => "exact_w1",
            Backend::Otdd { .. } => "otdd",
        }
    }
}

/// Distances along a policy sequence `π_0, …, π_N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryGeometry {
    /// `y_k = d(π_k, π_{k+1})`, `k = 0..N-1`.
    pub stepwise: Vec<f64>,
    /// `x_k = d(π_k, π_ref)`, `k = 0..N`.
    pub to_reference: Vec<f64>,
    /// `d(π_0, π_N)`.
    pub direct: f64,
    pub reference: ReferenceKind,
    pub backend: Backend,
    /// Exact discounted values `J_{π_k}`.
    pub policy_values: Vec<f64>,
    pub reference_value: f64,
}

impl TrajectoryGeometry {
    /// Geometry from precomputed distances, for synthetic trajectories.
    pub fn from_distances(
        stepwise: Vec<f64>,
        to_reference: Vec<f64>,
        direct: f64,
        reference: ReferenceKind,
    ) -> Result<Self> {
        if stepwise.is_empty() || to_reference.len() != stepwise.len() + 1 {
            return Err(Error::Usage(format!(
                "need N ≥ 1 steps and N+1 reference distances, got {} and {}",
                stepwise.len(),
                to_reference.len()
            )));
        }
        if stepwise
            .iter()
            .chain(&to_reference)
            .chain([&direct])
            .any(|d| !(*d >= 0.0))
        {
            return Err(Error::Usage("distances must be nonnegative".into()));
        }
        let n = to_reference.len();
        Ok(Self {
            stepwise,
            to_reference,
            direct,
            reference,
            backend: Backend::ExactW1,
            policy_values: vec![f64::NAN; n],
            reference_value: f64::NAN,
        })
    }

    /// Number of updates `N`.
    pub fn n_updates(&self) -> usize {
        self.stepwise.len()
    }

    /// `δ_k = x_k − x_{k+1}`.
    pub fn deltas(&self) -> Vec<f64> {
        self.to_reference.windows(2).map(|w| w[0] - w[1]).collect()
    }

    pub fn path_length(&self) -> f64 {
        self.stepwise.iter().sum()
    }
}

fn policy_key(p: &PolicySnapshot) -> Vec<u64> {
    p.probs().iter().map(|x| x.to_bits()).collect()
}

enum Representation {
    Exact(OccupancyMeasure),
    Dataset(PolicyDataset),
}

/// Measures the trace against `reference`, computing one occupancy per distinct policy.
///
/// Terminal-state rows are canonicalized first, so policies that differ only in the goal
/// state are treated as identical. Identical consecutive snapshots give `y_k = 0`.
pub fn trajectory_geometry(
    trace: &PolicyTrace,
    mdp: &TabularMdp,
    reference: &PolicySnapshot,
    reference_kind: ReferenceKind,
    backend: Backend,
    metric: &GroundMetric,
) -> Result<TrajectoryGeometry> {
    trace.validate()?;
    if trace.snapshots.len() < 2 {
        return Err(Error::Usage("trajectory geometry needs at least two snapshots".into()));
    }
    reference.check_dims(mdp)?;

    // Distinct policies; the reference gets the last slot when it is new.
    let mut ids: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut distinct: Vec<PolicySnapshot> = Vec::new();
    let mut intern = |p: &PolicySnapshot| -> usize {
        let canon = p.clone().with_terminal_convention(mdp);
        *ids.entry(policy_key(&canon)).or_insert_with(|| {
            distinct.push(canon);
            distinct.len() - 1
        })
    };
    let mut seq = Vec::with_capacity(trace.snapshots.len());
    for snap in &trace.snapshots {
        snap.check_dims(mdp)?;
        seq.push(intern(snap));
    }
    let ref_id = intern(reference);

    let occupancies: Vec<OccupancyMeasure> = distinct
        .iter()
        .map(|p| exact_discounted_occupancy(mdp, p))
        .collect::<Result<_>>()?;
    let values: Vec<f64> = occupancies
        .iter()
        .map(|o| o.expectation(mdp.rewards()) / (1.0 - mdp.gamma()))
        .collect();

    let reps: Vec<Representation> = match backend {
        Backend::ExactW1 => occupancies.into_iter().map(Representation::Exact).collect(),
        Backend::Otdd { rollouts, seed } => {
            if rollouts == 0 {
                return Err(Error::Usage(
                    "OTDD backend needs at least one rollout per policy".into(),
                ));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            distinct
                .iter()
                .map(|p| {
                    let eps: Vec<Rollout> = (0..rollouts)
                        .map(|_| rollout(mdp, p, &mut rng))
                        .collect::<Result<_>>()?;
                    // Episodes that start in the goal contribute no samples; keep the goal pair.
                    let ds = dataset_from_rollouts(&eps, mdp.n_states(), mdp.n_actions())
                        .or_else(|_| PolicyDataset::from_occupancy(&exact_discounted_occupancy(mdp, p)?))?;
                    Ok(Representation::Dataset(ds))
                })
                .collect::<Result<_>>()?
        }
    };

    let mut solver = OtddSolver::new();
    let mut cache: HashMap<(usize, usize), f64> = HashMap::new();
    let mut dist = |i: usize, j: usize| -> Result<f64> {
        if i == j {
            return Ok(0.0);
        }
        let key = (i.min(j), i.max(j));
        if let Some(d) = cache.get(&key) {
            return Ok(*d);
        }
        let d = match (&reps[key.0], &reps[key.1]) {
            (Representation::Exact(a), Representation::Exact(b)) => wasserstein1(a, b, metric)?.0,
            (Representation::Dataset(a), Representation::Dataset(b)) => solver.distance(a, b, metric)?,
            _ => unreachable!("one representation per backend"),
        };
        cache.insert(key, d);
        Ok(d)
    };

    let n = seq.len() - 1;
    let target = match reference_kind {
        ReferenceKind::OptimalPolicy => ref_id,
        ReferenceKind::FinalPolicy => seq[n],
    };
    let stepwise = (0..n).map(|k| dist(seq[k], seq[k + 1])).collect::<Result<Vec<_>>>()?;
    let to_reference = seq.iter().map(|&i| dist(i, target)).collect::<Result<Vec<_>>>()?;
    let direct = dist(seq[0], seq[n])?;
    Ok(TrajectoryGeometry {
        stepwise,
        to_reference,
        direct,
        reference: reference_kind,
        backend,
        policy_values: seq.iter().map(|&i| values[i]).collect(),
        reference_value: values[target],
    })
}

/// Effort of sequential learning.
///
/// With the final policy as reference this is `Σ y_k / d(π_0, π_N)`. With the optimal policy
/// as reference the path is closed at `π*`: the last step is replaced by `x_{N-1}` and the
/// denominator is `x_0`, so the two coincide whenever `π_N = π*`.
pub fn esl(geometry: &TrajectoryGeometry) -> Option<f64> {
    match geometry.reference {
        ReferenceKind::FinalPolicy => eta_sub(geometry),
        ReferenceKind::OptimalPolicy => {
            let n = geometry.n_updates();
            let x0 = geometry.to_reference[0];
            if x0 <= DISTANCE_TOL {
                return None;
            }
            let body: f64 = geometry.stepwise[..n - 1].iter().sum();
            Some((body + geometry.to_reference[n - 1]) / x0)
        }
    }
}

/// `Σ y_k / d(π_0, π_N)` with the actually-final policy as endpoint.
pub fn eta_sub(geometry: &TrajectoryGeometry) -> Option<f64> {
    (geometry.direct > DISTANCE_TOL).then(|| geometry.path_length() / geometry.direct)
}

fn omr_range(stepwise: &[f64], deltas: &[f64]) -> Option<f64> {
    let total: f64 = stepwise.iter().sum();
    if total <= 0.0 {
        return None;
    }
    let improving: f64 = stepwise
        .iter()
        .zip(deltas)
        .filter(|(_, d)| **d > 0.0)
        .map(|(y, _)| y)
        .sum();
    Some(improving / total)
}

/// Share of path length spent on updates that strictly reduce the distance to the reference.
pub fn omr(geometry: &TrajectoryGeometry) -> Option<f64> {
    omr_range(&geometry.stepwise, &geometry.deltas())
}

/// Largest admissible start index for [`omr_k`]: the tail must keep `ceil(0.1·N)` updates.
pub fn omr_k_max_start(n_updates: usize) -> usize {
    n_updates - n_updates.div_ceil(10)
}

/// OMR over the tail `k = i..N-1`.
pub fn omr_k(geometry: &TrajectoryGeometry, i: usize) -> Result<Option<f64>> {
    let max = omr_k_max_start(geometry.n_updates());
    if i > max {
        return Err(Error::Usage(format!(
            "tail start {i} exceeds the admissible maximum {max}"
        )));
    }
    Ok(omr_range(&geometry.stepwise[i..], &geometry.deltas()[i..]))
}

/// Slack of `(η − η_sub)/η ≤ 2·d(π_N, π*) / d(π_0, π_N)`; nonnegative when the bound holds.
pub fn check_eta_sub_bound(eta: f64, eta_sub: f64, d_n_star: f64, d_0_n: f64) -> f64 {
    2.0 * d_n_star / d_0_n - (eta - eta_sub) / eta
}

/// Both sides of `Σ_{k=1..N} (J* − J_k) ≤ (L_R/ρ) Σ_{k=1..N} x_k`.
pub fn regret_analogue(geometry: &TrajectoryGeometry, mdp: &TabularMdp, metric: &GroundMetric) -> Result<(f64, f64)> {
    if geometry.reference != ReferenceKind::OptimalPolicy {
        return Err(Error::Usage(
            "the regret analogue needs the optimal policy as reference".into(),
        ));
    }
    let lipschitz = lipschitz_constant_with(mdp, metric);
    let rho = 1.0 - mdp.gamma();
    let lhs = geometry.policy_values[1..]
        .iter()
        .map(|j| geometry.reference_value - j)
        .sum();
    let rhs = lipschitz / rho * geometry.to_reference[1..].iter().sum::<f64>();
    Ok((lhs, rhs))
}

/// Per-run indices. Regret and bound slack need the optimal policy as reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexReport {
    pub esl: Option<f64>,
    pub omr: Option<f64>,
    pub eta_sub: Option<f64>,
    pub regret_lhs: Option<f64>,
    pub regret_rhs: Option<f64>,
    /// Slack of the `η_sub` bound; `None` when either index is undefined.
    pub bound_gap: Option<f64>,
}

pub fn index_report(geometry: &TrajectoryGeometry, mdp: &TabularMdp, metric: &GroundMetric) -> Result<IndexReport> {
    let esl_value = esl(geometry);
    let eta_sub_value = eta_sub(geometry);
    let optimal = geometry.reference == ReferenceKind::OptimalPolicy;
    let (regret_lhs, regret_rhs) = if optimal {
        let (l, r) = regret_analogue(geometry, mdp, metric)?;
        (Some(l), Some(r))
    } else {
        (None, None)
    };
    let n = geometry.n_updates();
    let bound_gap = match (esl_value, eta_sub_value) {
        (Some(eta), Some(sub)) if optimal => {
            Some(check_eta_sub_bound(eta, sub, geometry.to_reference[n], geometry.direct))
        }
        _ => None,
    };
    Ok(IndexReport {
        esl: esl_value,
        omr: omr(geometry),
        eta_sub: eta_sub_value,
        regret_lhs,
        regret_rhs,
        bound_gap,
    })
}
