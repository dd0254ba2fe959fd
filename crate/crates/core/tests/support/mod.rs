//! Independent reference implementations used to check the library.
#![allow(dead_code)]

use std::collections::BTreeMap;

use occtraj::mdp::{MdpParts, TabularMdp};
use occtraj::policy::PolicySnapshot;
use occtraj::transport::GroundMetric;
use rand::Rng;

const EPS: f64 = 1e-11;

/// Dense two-phase simplex with Bland's rule: `min cᵀx` s.t. `Ax = b`, `x ≥ 0`.
///
/// Returns `None` when infeasible or unbounded.
pub fn simplex_min(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> Option<f64> {
    let m = a.len();
    let n = c.len();
    // Columns: n structural, m artificial, then the right-hand side.
    let width = n + m + 1;
    let mut t = vec![vec![0.0; width]; m];
    for i in 0..m {
        let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[i][j] = sign * a[i][j];
        }
        t[i][n + i] = 1.0;
        t[i][width - 1] = sign * b[i];
    }
    let mut basis: Vec<usize> = (n..n + m).collect();

    let phase1: Vec<f64> = (0..n + m).map(|j| if j >= n { 1.0 } else { 0.0 }).collect();
    run_bland(&mut t, &mut basis, &phase1, n + m)?;
    let infeasibility: f64 = basis
        .iter()
        .enumerate()
        .filter(|(_, &j)| j >= n)
        .map(|(i, _)| t[i][width - 1])
        .sum();
    if infeasibility > 1e-9 {
        return None;
    }
    // Drive artificials out of the basis where possible; remaining rows are redundant.
    for i in 0..m {
        if basis[i] >= n {
            if let Some(j) = (0..n).find(|&j| t[i][j].abs() > 1e-9) {
                pivot(&mut t, &mut basis, i, j);
            }
        }
    }
    let mut cost = c.to_vec();
    cost.extend(std::iter::repeat_n(0.0, m));
    run_bland(&mut t, &mut basis, &cost, n)?;
    Some(basis.iter().enumerate().map(|(i, &j)| cost[j] * t[i][width - 1]).sum())
}

fn pivot(t: &mut [Vec<f64>], basis: &mut [usize], row: usize, col: usize) {
    let p = t[row][col];
    t[row].iter_mut().for_each(|v| *v /= p);
    let pivot_row = t[row].clone();
    for (i, r) in t.iter_mut().enumerate() {
        if i != row && r[col] != 0.0 {
            let f = r[col];
            r.iter_mut().zip(&pivot_row).for_each(|(v, pv)| *v -= f * pv);
        }
    }
    basis[row] = col;
}

/// Minimizes `cost` over the first `allowed` columns; `None` if unbounded.
fn run_bland(t: &mut [Vec<f64>], basis: &mut [usize], cost: &[f64], allowed: usize) -> Option<()> {
    let rhs = t.first().map(|r| r.len() - 1).unwrap_or(0);
    loop {
        let entering = (0..allowed).find(|&j| {
            if basis.contains(&j) {
                return false;
            }
            let reduced = cost[j] - basis.iter().enumerate().map(|(i, &b)| cost[b] * t[i][j]).sum::<f64>();
            reduced < -EPS
        });
        let Some(j) = entering else { return Some(()) };
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..t.len() {
            if t[i][j] > EPS {
                let ratio = t[i][rhs] / t[i][j];
                let better = match leave {
                    None => true,
                    Some((k, r)) => ratio < r - EPS || (ratio <= r + EPS && basis[i] < basis[k]),
                };
                if better {
                    leave = Some((i, ratio));
                }
            }
        }
        let (i, _) = leave?;
        pivot(t, basis, i, j);
    }
}

/// Transportation LP between `supply` and `demand` with row-major `cost`.
pub fn transport_lp(supply: &[f64], demand: &[f64], cost: &[f64]) -> f64 {
    let (m, n) = (supply.len(), demand.len());
    let mut rows = Vec::with_capacity(m + n);
    let mut rhs = Vec::with_capacity(m + n);
    for i in 0..m {
        let mut r = vec![0.0; m * n];
        (0..n).for_each(|j| r[i * n + j] = 1.0);
        rows.push(r);
        rhs.push(supply[i]);
    }
    for j in 0..n {
        let mut r = vec![0.0; m * n];
        (0..m).for_each(|i| r[i * n + j] = 1.0);
        rows.push(r);
        rhs.push(demand[j]);
    }
    simplex_min(cost, &rows, &rhs).expect("balanced transport is feasible and bounded")
}

/// W1 between two weight vectors on the same index space, solved over their supports.
pub fn w1_oracle(mu: &[f64], nu: &[f64], cost: impl Fn(usize, usize) -> f64) -> f64 {
    let src: Vec<usize> = (0..mu.len()).filter(|&i| mu[i] > 0.0).collect();
    let dst: Vec<usize> = (0..nu.len()).filter(|&i| nu[i] > 0.0).collect();
    let supply: Vec<f64> = src.iter().map(|&i| mu[i]).collect();
    let mut demand: Vec<f64> = dst.iter().map(|&i| nu[i]).collect();
    let ratio = supply.iter().sum::<f64>() / demand.iter().sum::<f64>();
    demand.iter_mut().for_each(|d| *d *= ratio);
    let c: Vec<f64> = src
        .iter()
        .flat_map(|&i| dst.iter().map(move |&j| (i, j)))
        .map(|(i, j)| cost(i, j))
        .collect();
    transport_lp(&supply, &demand, &c)
}

/// Nested dataset distance computed from raw samples with LP solves at both levels.
pub fn otdd_oracle(a: &[(usize, usize)], b: &[(usize, usize)], metric: &GroundMetric) -> f64 {
    let freq = |ds: &[(usize, usize)]| {
        let mut m: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for &p in ds {
            *m.entry(p).or_default() += 1.0 / ds.len() as f64;
        }
        m
    };
    let conditional = |ds: &[(usize, usize)], label: usize| {
        let states: Vec<usize> = ds.iter().filter(|p| p.1 == label).map(|p| p.0).collect();
        let mut w = vec![0.0; metric.n_states()];
        for &s in &states {
            w[s] += 1.0 / states.len() as f64;
        }
        w
    };
    let (fa, fb) = (freq(a), freq(b));
    let atoms_a: Vec<((usize, usize), f64)> = fa.into_iter().collect();
    let atoms_b: Vec<((usize, usize), f64)> = fb.into_iter().collect();
    let mut inner: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for &((_, la), _) in &atoms_a {
        for &((_, lb), _) in &atoms_b {
            inner.entry((la, lb)).or_insert_with(|| {
                w1_oracle(&conditional(a, la), &conditional(b, lb), |s, t| {
                    metric.state_distance(s, t)
                })
            });
        }
    }
    let supply: Vec<f64> = atoms_a.iter().map(|x| x.1).collect();
    let demand: Vec<f64> = atoms_b.iter().map(|x| x.1).collect();
    let cost: Vec<f64> = atoms_a
        .iter()
        .flat_map(|&((s, la), _)| {
            atoms_b
                .iter()
                .map(|&((t, lb), _)| metric.state_distance(s, t) + inner[&(la, lb)])
                .collect::<Vec<_>>()
        })
        .collect();
    transport_lp(&supply, &demand, &cost)
}

/// `(1/H) Σ_t P(s_t, a_t)` by summing over every individual path of length `horizon`.
pub fn finite_horizon_by_paths(mdp: &TabularMdp, policy: &PolicySnapshot, horizon: usize) -> Vec<f64> {
    fn walk(mdp: &TabularMdp, pi: &PolicySnapshot, s: usize, t: usize, h: usize, prob: f64, out: &mut [f64]) {
        if t == h {
            return;
        }
        let na = mdp.n_actions();
        for a in 0..na {
            let pa = prob * pi.prob(s, a);
            if pa == 0.0 {
                continue;
            }
            out[s * na + a] += pa / h as f64;
            for s2 in 0..mdp.n_states() {
                let p = mdp.transition(s, a, s2);
                if p > 0.0 {
                    walk(mdp, pi, s2, t + 1, h, pa * p, out);
                }
            }
        }
    }
    let mut out = vec![0.0; mdp.n_pairs()];
    for (s, &m) in mdp.mu().iter().enumerate() {
        if m > 0.0 {
            walk(mdp, policy, s, 0, horizon, m, &mut out);
        }
    }
    out
}

fn sample_index<R: Rng>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// Discounted occupancy estimated from `n` simulated infinite-horizon paths, cut when
/// `γ^t < 1e-12`. Goals are absorbing and keep following `policy`.
pub fn monte_carlo_occupancy<R: Rng>(mdp: &TabularMdp, policy: &PolicySnapshot, n: usize, rng: &mut R) -> Vec<f64> {
    let na = mdp.n_actions();
    let gamma = mdp.gamma();
    let mut out = vec![0.0; mdp.n_pairs()];
    for _ in 0..n {
        let mut s = sample_index(mdp.mu(), rng);
        let mut w = 1.0 - gamma;
        while w > 1e-12 {
            let a = sample_index(policy.row(s), rng);
            out[s * na + a] += w / n as f64;
            s = sample_index(mdp.transition_row(s, a), rng);
            w *= gamma;
        }
    }
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
    out
}

/// Random MDP with distinct one-dimensional state coordinates and no goal.
pub fn random_mdp<R: Rng>(rng: &mut R, n_states: usize, n_actions: usize, gamma: f64) -> TabularMdp {
    let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        let row = random_simplex(rng, n_states, 0.4);
        transition.extend(row);
    }
    let reward: Vec<f64> = (0..n_states * n_actions).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mu = random_simplex(rng, n_states, 0.3);
    let mut state_coords: Vec<Vec<i64>> = Vec::with_capacity(n_states);
    let mut x = 0;
    for _ in 0..n_states {
        x += rng.random_range(1..3);
        state_coords.push(vec![x]);
    }
    TabularMdp::new(MdpParts {
        n_states,
        n_actions,
        transition,
        reward,
        gamma,
        mu,
        max_steps: 50,
        goal_states: Vec::new(),
        state_coords,
    })
    .expect("random MDP is valid")
}

/// Random point of the simplex; each coordinate is zeroed with probability `sparsity`.
pub fn random_simplex<R: Rng>(rng: &mut R, n: usize, sparsity: f64) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n)
        .map(|_| {
            if rng.random_bool(sparsity) {
                0.0
            } else {
                rng.random_range(0.05..1.0)
            }
        })
        .collect();
    if w.iter().all(|x| *x == 0.0) {
        w[rng.random_range(0..n)] = 1.0;
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    w
}

pub fn random_policy<R: Rng>(rng: &mut R, n_states: usize, n_actions: usize, sparsity: f64) -> PolicySnapshot {
    let probs: Vec<f64> = (0..n_states)
        .flat_map(|_| random_simplex(rng, n_actions, sparsity))
        .collect();
    PolicySnapshot::new(n_states, n_actions, probs).expect("rows are distributions")
}

/// Mixes `policy` with the uniform policy.
pub fn soften(policy: &PolicySnapshot, eps: f64) -> PolicySnapshot {
    let na = policy.n_actions() as f64;
    let probs: Vec<f64> = policy.probs().iter().map(|p| (1.0 - eps) * p + eps / na).collect();
    PolicySnapshot::new(policy.n_states(), policy.n_actions(), probs).expect("mixture is a distribution")
}
