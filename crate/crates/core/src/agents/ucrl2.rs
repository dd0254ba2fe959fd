use rand::Rng;

use super::{random_deterministic_policy, AgentConfig, AgentVariant, CountModel, TraceBuilder};
use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::policy::{greedy_actions, PolicySnapshot, PolicyTrace};

const EVI_TOL: f64 = 1e-10;
const EVI_MAX_ITERS: usize = 100_000;

/// Maximizes `p·v` over the L1 ball of radius `radius` around `p_hat` (Jaksch et al.).
/// `order` lists states by decreasing value.
fn optimistic_transition(p_hat: &[f64], radius: f64, order: &[usize], out: &mut [f64]) {
    let best = order[0];
    out[best] = (p_hat[best] + radius / 2.0).min(1.0);
    // The remaining mass keeps the estimate on the best states and drops it from the worst.
    let mut remaining = 1.0 - out[best];
    for &s in &order[1..] {
        out[s] = p_hat[s].min(remaining);
        remaining -= out[s];
    }
}

/// Extended value iteration over the confidence set; returns the optimistic greedy actions.
fn extended_value_iteration(mdp: &TabularMdp, model: &CountModel, t: f64, delta: f64, scale: f64) -> Vec<usize> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let (r_min, r_max) = mdp.reward_range();
    let span = (r_max - r_min).max(f64::MIN_POSITIVE);
    let log_p = (2.0 * na as f64 * t / delta).ln();
    let log_r = (2.0 * (ns * na) as f64 * t / delta).ln();

    let mut p_hat = vec![0.0; ns * na * ns];
    let mut r_opt = vec![0.0; ns * na];
    let mut radius = vec![0.0; ns * na];
    for sa in 0..ns * na {
        let n = model.visits[sa];
        let denom = n.max(1.0);
        radius[sa] = scale * (14.0 * ns as f64 * log_p / denom).sqrt();
        let r_rad = scale * span * (3.5 * log_r / denom).sqrt();
        if n > 0.0 {
            for (dst, c) in p_hat[sa * ns..(sa + 1) * ns].iter_mut().zip(model.next_row(sa)) {
                *dst = c / n;
            }
            r_opt[sa] = (model.reward_sum[sa] / n + r_rad).min(r_max);
        } else {
            // Nothing observed: the whole simplex is plausible.
            p_hat[sa * ns + sa / na] = 1.0;
            radius[sa] = 2.0;
            r_opt[sa] = r_max;
        }
    }

    let mut v = vec![0.0f64; ns];
    let mut q = vec![0.0; ns * na];
    let mut order: Vec<usize> = (0..ns).collect();
    let mut p = vec![0.0; ns];
    for _ in 0..EVI_MAX_ITERS {
        order.sort_by(|a, b| v[*b].total_cmp(&v[*a]).then(a.cmp(b)));
        for s in 0..ns {
            for a in 0..na {
                let sa = s * na + a;
                if mdp.is_terminal(s) {
                    q[sa] = 0.0;
                    continue;
                }
                optimistic_transition(&p_hat[sa * ns..(sa + 1) * ns], radius[sa], &order, &mut p);
                q[sa] = r_opt[sa] + mdp.gamma() * p.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        let mut change: f64 = 0.0;
        for s in 0..ns {
            let best = q[s * na..(s + 1) * na]
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            change = change.max((best - v[s]).abs());
            v[s] = best;
        }
        if change <= EVI_TOL * v.iter().fold(1.0f64, |m, x| m.max(x.abs())) {
            break;
        }
    }
    greedy_actions(na, &q)
}

/// UCRL2 with the policy recomputed at every episode start.
pub fn train_ucrl2<R: Rng + ?Sized>(mdp: &TabularMdp, cfg: &AgentConfig, rng: &mut R) -> Result<PolicyTrace> {
    train_ucrl2_with_model(mdp, cfg, CountModel::empty(mdp), rng)
}

/// [`train_ucrl2`] starting from pre-loaded counts instead of an empty model.
pub fn train_ucrl2_with_model<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    cfg: &AgentConfig,
    mut model: CountModel,
    rng: &mut R,
) -> Result<PolicyTrace> {
    cfg.validate()?;
    let AgentVariant::Ucrl2 { delta } = cfg.variant else {
        return Err(Error::Config("UCRL2 needs a ucrl2 variant".into()));
    };
    let na = mdp.n_actions();
    let mut builder = TraceBuilder::new(mdp, cfg.convergence_window)?;
    let preloaded = model.visits.iter().any(|n| *n > 0.0);
    let mut policy = if preloaded {
        let actions = extended_value_iteration(mdp, &model, 1.0, delta, cfg.confidence_scale);
        PolicySnapshot::deterministic(na, &actions)?
    } else {
        random_deterministic_policy(mdp, rng)
    };
    let mut converged = builder.push(policy.clone(), 0)?;
    let mut t = 1usize;
    for episode in 1..=cfg.total_episodes {
        if converged {
            break;
        }
        let mut s = mdp.sample_initial(rng);
        builder.visit(s);
        for _ in 0..mdp.max_steps() {
            if mdp.is_terminal(s) {
                break;
            }
            let a = policy.mode_action(s);
            let (s2, r) = mdp.step(s, a, rng)?;
            builder.visit(s2);
            model.observe(s, a, r, s2);
            t += 1;
            s = s2;
        }
        let actions = extended_value_iteration(mdp, &model, t as f64, delta, cfg.confidence_scale);
        policy = PolicySnapshot::deterministic(na, &actions)?;
        converged = builder.push(policy.clone(), episode)?;
    }
    Ok(builder.finish(cfg.variant.id()))
}
