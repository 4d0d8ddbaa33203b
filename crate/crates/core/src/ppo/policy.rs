//! Gaussian actor with a sigmoid-squashed mean, and the critic.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use crate::env::OBS_DIM;
use crate::error::{Error, Result};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 1.0;

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Gaussian log-density of `action` around `mean` with `exp(log_std)` spread.
pub fn log_prob(action: f64, mean: f64, log_std: f64) -> f64 {
    let var = (2.0 * log_std).exp();
    -(action - mean).powi(2) / (2.0 * var) - log_std - 0.5 * (2.0 * PI).ln()
}

/// Differential entropy of the Gaussian.
pub fn entropy(log_std: f64) -> f64 {
    0.5 * (2.0 * PI * std::f64::consts::E).ln() + log_std
}

/// Gaussian draw clipped to `[0, 1]`, with its log-density at the clipped value.
pub fn sample_action<R: Rng + ?Sized>(mean: f64, log_std: f64, rng: &mut R) -> (f64, f64) {
    let eps: f64 = StandardNormal.sample(rng);
    let a = (mean + log_std.exp() * eps).clamp(0.0, 1.0);
    (a, log_prob(a, mean, log_std))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Actor {
    pub net: Mlp,
    pub log_std: f64,
}

impl Actor {
    /// Actor parameters followed by `log_std`.
    pub fn flat_len(&self) -> usize {
        self.net.len() + 1
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.net.params().to_vec();
        v.push(self.log_std);
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let n = self.net.len();
        self.net.params_mut().copy_from_slice(&flat[..n]);
        self.log_std = flat[n];
    }
}

/// `(mean in (0, 1), log_std)` for one observation.
pub fn actor_forward(actor: &Actor, observation: &[f64]) -> Result<(f64, f64)> {
    let z = actor.net.forward(observation)?[0];
    Ok((sigmoid(z), actor.log_std))
}

/// Deterministic action: the actor mean.
pub fn act_greedy(actor: &Actor, observation: &[f64]) -> Result<f64> {
    Ok(actor_forward(actor, observation)?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorCritic {
    pub actor: Actor,
    pub critic: Mlp,
}

impl ActorCritic {
    pub fn new<R: Rng + ?Sized>(hidden: &[usize], init_log_std: f64, rng: &mut R) -> Result<Self> {
        let mut sizes = vec![OBS_DIM];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Ok(Self {
            actor: Actor {
                net: Mlp::random(&sizes, 0.01, rng)?,
                log_std: init_log_std,
            },
            critic: Mlp::random(&sizes, 1.0, rng)?,
        })
    }

    pub fn value(&self, observation: &[f64]) -> Result<f64> {
        Ok(self.critic.forward(observation)?[0])
    }

    pub fn check_dims(&self, obs_dim: usize) -> Result<()> {
        if self.actor.net.input_dim() != obs_dim || self.critic.input_dim() != obs_dim {
            return Err(Error::config(
                "checkpoint",
                format!(
                    "networks expect {}/{} inputs, environment provides {obs_dim}",
                    self.actor.net.input_dim(),
                    self.critic.input_dim()
                ),
            ));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.actor.log_std.is_finite()
            && self.actor.net.params().iter().all(|p| p.is_finite())
            && self.critic.params().iter().all(|p| p.is_finite())
    }
}
