//! Proximal policy optimization, implemented directly on flat parameter vectors.

pub mod adam;
pub mod checkpoint;
pub mod gae;
pub mod loss;
pub mod mlp;
pub mod policy;
pub mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adam::{adam_step, AdamState};
pub use checkpoint::{config_hash, hash_json, Checkpoint};
pub use gae::gae;
pub use loss::{ppo_loss, Batch, Gradients, LossCoefficients, LossTerms};
pub use mlp::Mlp;
pub use policy::{act_greedy, actor_forward, sample_action, Actor, ActorCritic};
pub use train::{train, EpisodeRecord, TrainStatus, Trainer, TrainingReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub gamma: f64,
    pub clip_eps: f64,
    /// Optimizer updates between refreshes of the old policy.
    pub old_policy_sync_steps: u64,
    pub minibatch: usize,
    pub episodes: u64,
    /// Steps collected per worker per iteration; equals the episode length.
    pub horizon: u32,
    /// Parallel rollout workers.
    pub actors: usize,
    pub gae_lambda: f64,
    pub value_coeff: f64,
    pub entropy_coeff: f64,
    pub epochs: usize,
    pub hidden: Vec<usize>,
    pub advantage_norm: bool,
    /// Rewards are multiplied by this before advantage and value estimation.
    pub reward_scale: f64,
    pub init_log_std: f64,
    /// Decay both learning rates linearly to zero over the episode budget.
    pub lr_anneal: bool,
    /// Global gradient-norm clip per network; `None` disables it.
    pub max_grad_norm: Option<f64>,
    /// Episodes between periodic checkpoints; 0 keeps only the final one.
    pub checkpoint_every: u64,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            lr_actor: 1e-6,
            lr_critic: 2e-6,
            gamma: 0.95,
            clip_eps: 0.2,
            old_policy_sync_steps: 10,
            minibatch: 32,
            episodes: 300_000,
            horizon: 20,
            actors: 4,
            gae_lambda: 0.95,
            value_coeff: 0.5,
            entropy_coeff: 0.01,
            epochs: 4,
            hidden: vec![64, 64],
            advantage_norm: true,
            reward_scale: 1.0,
            init_log_std: -0.5,
            lr_anneal: false,
            max_grad_norm: None,
            checkpoint_every: 0,
            seed: 0,
        }
    }
}

impl PpoConfig {
    /// The default hyperparameters at full episode budget.
    pub fn reference() -> Self {
        Self::default()
    }

    /// Reduced budget with raised learning rates for desk-scale runs.
    /// Meant for [`crate::presets::desk_training_spec`].
    pub fn desk() -> Self {
        Self {
            lr_actor: 3e-4,
            lr_critic: 1e-3,
            episodes: 20_000,
            reward_scale: 1e-3,
            init_log_std: -1.2,
            lr_anneal: true,
            max_grad_norm: Some(1.0),
            checkpoint_every: 5_000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !pos(self.lr_actor) {
            return Err(Error::config("lr_actor", "must be > 0"));
        }
        if !pos(self.lr_critic) {
            return Err(Error::config("lr_critic", "must be > 0"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config("gamma", "must lie in (0, 1]"));
        }
        if !pos(self.clip_eps) {
            return Err(Error::config("clip_eps", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(Error::config("gae_lambda", "must lie in [0, 1]"));
        }
        if self.minibatch == 0 || self.actors == 0 || self.epochs == 0 || self.horizon == 0 {
            return Err(Error::config(
                "minibatch/actors/epochs/horizon",
                "must be >= 1",
            ));
        }
        if self.old_policy_sync_steps == 0 {
            return Err(Error::config("old_policy_sync_steps", "must be >= 1"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::config("hidden", "need at least one non-empty hidden layer"));
        }
        if !pos(self.reward_scale) {
            return Err(Error::config("reward_scale", "must be > 0"));
        }
        if !(self.value_coeff >= 0.0 && self.entropy_coeff >= 0.0) {
            return Err(Error::config("value_coeff/entropy_coeff", "must be >= 0"));
        }
        if !self.init_log_std.is_finite() {
            return Err(Error::config("init_log_std", "must be finite"));
        }
        if let Some(g) = self.max_grad_norm {
            if !pos(g) {
                return Err(Error::config("max_grad_norm", "must be > 0"));
            }
        }
        Ok(())
    }

    pub fn loss_coefficients(&self) -> LossCoefficients {
        LossCoefficients {
            clip_eps: self.clip_eps,
            value_coeff: self.value_coeff,
            entropy_coeff: self.entropy_coeff,
        }
    }
}
