use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use super::{random_deterministic_policy, solve_dense_model, AgentConfig, AgentVariant, CountModel, TraceBuilder};
use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::policy::{PolicySnapshot, PolicyTrace};

/// Dirichlet prior on transitions and a conjugate Normal prior on mean rewards.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsrlPrior {
    pub dirichlet_alpha: f64,
    pub reward_mean: f64,
    pub reward_var: f64,
    /// Known observation noise variance.
    pub noise_var: f64,
}

impl Default for PsrlPrior {
    fn default() -> Self {
        Self {
            dirichlet_alpha: 1.0,
            reward_mean: 0.0,
            reward_var: 1.0,
            noise_var: 1.0,
        }
    }
}

impl PsrlPrior {
    pub fn validate(&self) -> Result<()> {
        let ok =
            self.dirichlet_alpha > 0.0 && self.reward_var > 0.0 && self.noise_var > 0.0 && self.reward_mean.is_finite();
        if !ok {
            return Err(Error::Config(format!("invalid PSRL prior {self:?}")));
        }
        Ok(())
    }
}

fn sample_model<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    model: &CountModel,
    prior: &PsrlPrior,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut transition = vec![0.0; ns * na * ns];
    let mut reward = vec![0.0; ns * na];
    let numerical = |e: String| Error::Numerical(format!("posterior sampling failed: {e}"));
    for sa in 0..ns * na {
        if mdp.is_terminal(sa / na) {
            // Terminal states are known to be absorbing with zero reward.
            transition[sa * ns + sa / na] = 1.0;
            continue;
        }
        let row = &mut transition[sa * ns..(sa + 1) * ns];
        for (dst, c) in row.iter_mut().zip(model.next_row(sa)) {
            let g = Gamma::new(prior.dirichlet_alpha + c, 1.0).map_err(|e| numerical(e.to_string()))?;
            *dst = g.sample(rng);
        }
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            row.iter_mut().for_each(|p| *p /= total);
        } else {
            row[sa / na] = 1.0;
        }
        let n = model.visits[sa];
        let precision = 1.0 / prior.reward_var + n / prior.noise_var;
        let mean = (prior.reward_mean / prior.reward_var + model.reward_sum[sa] / prior.noise_var) / precision;
        let normal = Normal::new(mean, (1.0 / precision).sqrt()).map_err(|e| numerical(e.to_string()))?;
        reward[sa] = normal.sample(rng);
    }
    Ok((transition, reward))
}

/// Posterior sampling RL: one sampled model, solved and followed greedily, per episode.
pub fn train_psrl<R: Rng + ?Sized>(mdp: &TabularMdp, cfg: &AgentConfig, rng: &mut R) -> Result<PolicyTrace> {
    train_psrl_with_model(mdp, cfg, CountModel::empty(mdp), rng)
}

/// [`train_psrl`] with the posterior conditioned on pre-loaded counts.
///
/// With pre-loaded counts the first snapshot is already a posterior sample rather than a
/// random policy.
pub fn train_psrl_with_model<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    cfg: &AgentConfig,
    mut model: CountModel,
    rng: &mut R,
) -> Result<PolicyTrace> {
    cfg.validate()?;
    let AgentVariant::Psrl { prior } = cfg.variant else {
        return Err(Error::Config("PSRL needs a psrl variant".into()));
    };
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let terminal: Vec<bool> = (0..ns).map(|s| mdp.is_terminal(s)).collect();
    let resample = |model: &CountModel, rng: &mut R| -> Result<PolicySnapshot> {
        let (transition, reward) = sample_model(mdp, model, &prior, rng)?;
        let actions = solve_dense_model(ns, na, mdp.gamma(), &transition, &reward, &terminal);
        PolicySnapshot::deterministic(na, &actions)
    };
    let mut builder = TraceBuilder::new(mdp, cfg.convergence_window)?;
    let mut policy = if model.visits.iter().any(|n| *n > 0.0) {
        resample(&model, rng)?
    } else {
        random_deterministic_policy(mdp, rng)
    };
    let mut converged = builder.push(policy.clone(), 0)?;
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
            s = s2;
        }
        policy = resample(&model, rng)?;
        converged = builder.push(policy.clone(), episode)?;
    }
    Ok(builder.finish(cfg.variant.id()))
}
