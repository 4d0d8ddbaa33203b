//! Clipped-surrogate PPO loss with analytic gradients through both networks.

use serde::{Deserialize, Serialize};

use super::policy::{entropy, log_prob, sigmoid, ActorCritic};
use crate::error::{Error, Result};

/// A minibatch; all slices share one length.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub observations: &'a [Vec<f64>],
    pub actions: &'a [f64],
    pub old_log_probs: &'a [f64],
    pub advantages: &'a [f64],
    pub value_targets: &'a [f64],
}

impl Batch<'_> {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    fn check(&self) -> Result<()> {
        let n = self.observations.len();
        if n == 0
            || self.actions.len() != n
            || self.old_log_probs.len() != n
            || self.advantages.len() != n
            || self.value_targets.len() != n
        {
            return Err(Error::Domain(format!(
                "minibatch fields differ in length or are empty: obs {n}, actions {}, logp {}, adv {}, targets {}",
                self.actions.len(),
                self.old_log_probs.len(),
                self.advantages.len(),
                self.value_targets.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossCoefficients {
    pub clip_eps: f64,
    pub value_coeff: f64,
    pub entropy_coeff: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    /// Minimized quantity, `-(surrogate - c1 * value_loss + c2 * entropy)`.
    pub loss: f64,
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// Actor parameters followed by `log_std`.
    pub actor: Vec<f64>,
    pub critic: Vec<f64>,
}

/// `min(r * A, clip(r, 1 - eps, 1 + eps) * A)` and whether the unclipped branch is active.
pub fn clipped_objective(ratio: f64, advantage: f64, eps: f64) -> (f64, bool) {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * advantage;
    if unclipped <= clipped {
        (unclipped, true)
    } else {
        (clipped, false)
    }
}

pub fn ppo_loss(net: &ActorCritic, batch: &Batch, c: &LossCoefficients) -> Result<(LossTerms, Gradients)> {
    batch.check()?;
    let n = batch.len() as f64;
    let log_std = net.actor.log_std;
    let var = (2.0 * log_std).exp();
    let mut g_actor = vec![0.0; net.actor.flat_len()];
    let mut g_critic = vec![0.0; net.critic.len()];
    let n_actor = net.actor.net.len();

    let (mut surrogate, mut value_loss, mut clipped, mut kl) = (0.0, 0.0, 0usize, 0.0);
    for i in 0..batch.len() {
        let obs = &batch.observations[i];
        let cache = net.actor.net.forward_cached(obs)?;
        let mean = sigmoid(cache.output[0]);
        let a = batch.actions[i];
        let lp = log_prob(a, mean, log_std);
        let ratio = (lp - batch.old_log_probs[i]).exp();
        let adv = batch.advantages[i];
        let (obj, active) = clipped_objective(ratio, adv, c.clip_eps);
        surrogate += obj;
        kl += batch.old_log_probs[i] - lp;
        if (ratio - 1.0).abs() > c.clip_eps {
            clipped += 1;
        }
        if active && adv != 0.0 {
            // d loss / d logp = -(A r) / n
            let dlp = -adv * ratio / n;
            let dmean = dlp * (a - mean) / var;
            let dz = dmean * mean * (1.0 - mean);
            net.actor.net.backward(&cache, &[dz], &mut g_actor[..n_actor]);
            g_actor[n_actor] += dlp * ((a - mean).powi(2) / var - 1.0);
        }

        let vc = net.critic.forward_cached(obs)?;
        let err = vc.output[0] - batch.value_targets[i];
        value_loss += err * err;
        net.critic
            .backward(&vc, &[c.value_coeff * 2.0 * err / n], &mut g_critic);
    }
    surrogate /= n;
    value_loss /= n;
    let ent = entropy(log_std);
    g_actor[n_actor] -= c.entropy_coeff;
    let terms = LossTerms {
        loss: -(surrogate - c.value_coeff * value_loss + c.entropy_coeff * ent),
        surrogate,
        value_loss,
        entropy: ent,
        clip_fraction: clipped as f64 / n,
        approx_kl: kl / n,
    };
    let finite = terms.loss.is_finite()
        && g_actor.iter().all(|g| g.is_finite())
        && g_critic.iter().all(|g| g.is_finite());
    if !finite {
        return Err(Error::Numerical(format!(
            "non-finite PPO loss: {terms:?}, batch {} samples, |A|max {:.3e}, |V_targ|max {:.3e}, log_std {log_std}",
            batch.len(),
            batch.advantages.iter().fold(0.0f64, |m, a| m.max(a.abs())),
            batch.value_targets.iter().fold(0.0f64, |m, a| m.max(a.abs())),
        )));
    }
    Ok((
        terms,
        Gradients {
            actor: g_actor,
            critic: g_critic,
        },
    ))
}
