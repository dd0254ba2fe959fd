use serde::{Deserialize, Serialize};

use super::run::RunRecord;
use crate::agents::optimal_reference;
use crate::mdp::TabularMdp;
use crate::metrics::{esl, eta_sub, omr, Backend, ReferenceKind, TrajectoryGeometry};
use crate::occupancy::{bellman_flow_residual, exact_discounted_occupancy};
use crate::policy::PolicySnapshot;

/// Absolute slack allowed on every inequality, scaled by the magnitude of its terms.
pub const VERIFY_TOL: f64 = 1e-9;

pub const INVARIANTS: [&str; 8] = [
    "distances_valid",
    "index_ranges",
    "index_consistency",
    "triangle",
    "performance_difference",
    "regret_analogue",
    "eta_sub_bound",
    "occupancy_normalization",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub run_id: String,
    pub seed: u64,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub invariant: String,
    pub passed: usize,
    pub failed: usize,
    /// Runs the check does not apply to.
    pub skipped: usize,
    pub violations: Vec<Violation>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckOutcome>,
    /// Distribution of the `η_sub` bound slack over runs where it is defined.
    pub gap_histogram: Vec<HistogramBin>,
    pub min_gap: Option<f64>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.failed == 0)
    }

    pub fn failed_invariants(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|c| c.failed > 0)
            .map(|c| c.invariant.as_str())
            .collect()
    }

    pub fn check(&self, invariant: &str) -> Option<&CheckOutcome> {
        self.checks.iter().find(|c| c.invariant == invariant)
    }
}

fn tol(scale: f64) -> f64 {
    VERIFY_TOL * scale.abs().max(1.0)
}

/// `Ok(None)` passes, `Ok(Some(msg))` fails, `Err(())` skips.
type CheckResult = std::result::Result<Option<String>, ()>;

fn distances_valid(g: &TrajectoryGeometry) -> CheckResult {
    if g.stepwise.is_empty()
        || g.to_reference.len() != g.stepwise.len() + 1
        || g.policy_values.len() != g.to_reference.len()
    {
        return Ok(Some(format!(
            "inconsistent lengths: {} steps, {} reference distances, {} values",
            g.stepwise.len(),
            g.to_reference.len(),
            g.policy_values.len()
        )));
    }
    let bad = |v: &[f64]| v.iter().position(|d| !(d.is_finite() && *d >= 0.0));
    if let Some(k) = bad(&g.stepwise) {
        return Ok(Some(format!("y_{k} = {}", g.stepwise[k])));
    }
    if let Some(k) = bad(&g.to_reference) {
        return Ok(Some(format!("x_{k} = {}", g.to_reference[k])));
    }
    if !(g.direct.is_finite() && g.direct >= 0.0) {
        return Ok(Some(format!("direct distance = {}", g.direct)));
    }
    Ok(None)
}

fn index_ranges(r: &RunRecord) -> CheckResult {
    let idx = r.indices.as_ref().ok_or(())?;
    for (name, v) in [("η", idx.esl), ("η_sub", idx.eta_sub)] {
        if let Some(v) = v {
            if !(v >= 1.0 - tol(v)) {
                return Ok(Some(format!("{name} = {v} < 1")));
            }
        }
    }
    if let Some(k) = idx.omr {
        if !(-VERIFY_TOL..=1.0 + VERIFY_TOL).contains(&k) {
            return Ok(Some(format!("κ = {k} outside [0, 1]")));
        }
    }
    Ok(None)
}

fn same(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => (x - y).abs() <= tol(x.max(y)),
        (None, None) => true,
        _ => false,
    }
}

fn index_consistency(r: &RunRecord, g: &TrajectoryGeometry) -> CheckResult {
    let idx = r.indices.as_ref().ok_or(())?;
    for (name, stored, fresh) in [
        ("η", idx.esl, esl(g)),
        ("η_sub", idx.eta_sub, eta_sub(g)),
        ("κ", idx.omr, omr(g)),
    ] {
        if !same(stored, fresh) {
            return Ok(Some(format!("stored {name} {stored:?} but distances give {fresh:?}")));
        }
    }
    Ok(None)
}

fn triangle(g: &TrajectoryGeometry) -> CheckResult {
    for (k, y) in g.stepwise.iter().enumerate() {
        let (a, b) = (g.to_reference[k], g.to_reference[k + 1]);
        if (a - b).abs() > y + tol(a.max(b)) {
            return Ok(Some(format!("|x_{k} − x_{}| = {} > y_{k} = {y}", k + 1, (a - b).abs())));
        }
    }
    let total = g.path_length();
    if g.direct > total + tol(total) {
        return Ok(Some(format!(
            "direct distance {} exceeds path length {total}",
            g.direct
        )));
    }
    if g.reference == ReferenceKind::FinalPolicy {
        let x0 = g.to_reference[0];
        if (x0 - g.direct).abs() > tol(x0) {
            return Ok(Some(format!(
                "x_0 = {x0} differs from the direct distance {}",
                g.direct
            )));
        }
    }
    Ok(None)
}

fn exact_lipschitz(r: &RunRecord, g: &TrajectoryGeometry) -> std::result::Result<f64, ()> {
    match (g.backend, r.reward_lipschitz) {
        (Backend::ExactW1, Some(l)) if g.reference_value.is_finite() => Ok(l / (1.0 - r.gamma)),
        _ => Err(()),
    }
}

fn performance_difference(r: &RunRecord, g: &TrajectoryGeometry) -> CheckResult {
    let scale = exact_lipschitz(r, g)?;
    for (k, (j, x)) in g.policy_values.iter().zip(&g.to_reference).enumerate() {
        let gap = (j - g.reference_value).abs();
        if gap > scale * x + tol(gap) {
            return Ok(Some(format!("|J_{k} − J_ref| = {gap} > {}", scale * x)));
        }
    }
    for (k, y) in g.stepwise.iter().enumerate() {
        let gap = (g.policy_values[k] - g.policy_values[k + 1]).abs();
        if gap > scale * y + tol(gap) {
            return Ok(Some(format!("|J_{k} − J_{}| = {gap} > {}", k + 1, scale * y)));
        }
    }
    Ok(None)
}

fn regret_analogue(r: &RunRecord, g: &TrajectoryGeometry) -> CheckResult {
    exact_lipschitz(r, g)?;
    let idx = r.indices.as_ref().ok_or(())?;
    match (idx.regret_lhs, idx.regret_rhs) {
        (Some(l), Some(rhs)) if l > rhs + tol(l.max(rhs)) => Ok(Some(format!("regret {l} exceeds {rhs}"))),
        (Some(_), Some(_)) => Ok(None),
        _ => Err(()),
    }
}

fn eta_sub_bound(r: &RunRecord) -> CheckResult {
    let gap = r.indices.as_ref().and_then(|i| i.bound_gap).ok_or(())?;
    if gap < -VERIFY_TOL {
        return Ok(Some(format!("η_sub bound slack {gap}")));
    }
    Ok(None)
}

fn histogram(values: &[f64], bins: usize) -> Vec<HistogramBin> {
    if values.is_empty() {
        return Vec::new();
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0; bins];
    for v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            lo: lo + i as f64 * width,
            hi: lo + (i + 1) as f64 * width,
            count,
        })
        .collect()
}

fn outcome(invariant: &str) -> CheckOutcome {
    CheckOutcome {
        invariant: invariant.to_string(),
        passed: 0,
        failed: 0,
        skipped: 0,
        violations: Vec::new(),
    }
}

fn tally(c: &mut CheckOutcome, r: &RunRecord, result: CheckResult) {
    match result {
        Ok(None) => c.passed += 1,
        Ok(Some(detail)) => {
            c.failed += 1;
            c.violations.push(Violation {
                run_id: r.run_id.clone(),
                seed: r.seed,
                detail,
            });
        }
        Err(()) => c.skipped += 1,
    }
}

/// Runs the inequality suite over stored records. Failed trials are skipped everywhere.
pub fn verify_records(records: &[RunRecord]) -> VerifyReport {
    let mut checks: Vec<CheckOutcome> = INVARIANTS[..7].iter().map(|n| outcome(n)).collect();
    let mut gaps = Vec::new();
    for r in records {
        let Some(g) = r.geometry.as_ref().filter(|_| r.is_ok()) else {
            checks.iter_mut().for_each(|c| c.skipped += 1);
            continue;
        };
        let structural = distances_valid(g);
        let sound = matches!(structural, Ok(None));
        tally(&mut checks[0], r, structural);
        if !sound {
            checks[1..].iter_mut().for_each(|c| c.skipped += 1);
            continue;
        }
        tally(&mut checks[1], r, index_ranges(r));
        tally(&mut checks[2], r, index_consistency(r, g));
        tally(&mut checks[3], r, triangle(g));
        tally(&mut checks[4], r, performance_difference(r, g));
        tally(&mut checks[5], r, regret_analogue(r, g));
        tally(&mut checks[6], r, eta_sub_bound(r));
        if let Some(gap) = r.indices.as_ref().and_then(|i| i.bound_gap) {
            gaps.push(gap);
        }
    }
    VerifyReport {
        checks,
        gap_histogram: histogram(&gaps, 10),
        min_gap: gaps.iter().copied().reduce(f64::min),
    }
}

/// Exact occupancies of reference policies sum to one and satisfy the flow constraint.
pub fn verify_environment(mdp: &TabularMdp) -> CheckOutcome {
    let mut c = outcome("occupancy_normalization");
    let mut policies = vec![("uniform", PolicySnapshot::uniform(mdp.n_states(), mdp.n_actions()))];
    if let Ok((optimal, _)) = optimal_reference(mdp) {
        policies.push(("optimal", optimal));
    }
    for (name, p) in policies {
        let detail = match exact_discounted_occupancy(mdp, &p) {
            Ok(occ) => {
                let mass: f64 = occ.weights().iter().sum();
                let residual = bellman_flow_residual(mdp, &occ);
                if (mass - 1.0).abs() > VERIFY_TOL || residual > VERIFY_TOL {
                    Some(format!("{name} policy: mass {mass}, flow residual {residual}"))
                } else {
                    None
                }
            }
            Err(e) => Some(format!("{name} policy: {e}")),
        };
        match detail {
            None => c.passed += 1,
            Some(detail) => {
                c.failed += 1;
                c.violations.push(Violation {
                    run_id: "environment".into(),
                    seed: 0,
                    detail,
                });
            }
        }
    }
    c
}
