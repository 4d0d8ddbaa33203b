//! JSON checkpoints of both networks and their optimizer state.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::adam::AdamState;
use super::mlp::Mlp;
use super::policy::{Actor, ActorCritic};
use super::PpoConfig;
use crate::env::{EpisodeSpec, Normalization};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Unix seconds supplied by the caller.
    pub created: u64,
    pub config_hash: String,
    pub episode: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSnapshot {
    /// `[out, in]` per layer.
    pub shapes: Vec<[usize; 2]>,
    /// `weights[layer][out][in]`.
    pub weights: Vec<Vec<Vec<f64>>>,
    pub biases: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_std: Option<f64>,
}

impl NetworkSnapshot {
    pub fn from_mlp(net: &Mlp, log_std: Option<f64>) -> Self {
        let sizes = net.sizes();
        let mut s = Self {
            shapes: Vec::new(),
            weights: Vec::new(),
            biases: Vec::new(),
            log_std,
        };
        for l in 0..sizes.len() - 1 {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let (w, b) = net.layer(l);
            s.shapes.push([n_out, n_in]);
            s.weights.push(w.chunks(n_in).map(<[f64]>::to_vec).collect());
            s.biases.push(b.to_vec());
        }
        s
    }

    pub fn to_mlp(&self) -> Result<Mlp> {
        let bad = |why: String| Error::config("checkpoint", why);
        let first = self.shapes.first().ok_or_else(|| bad("no layers".into()))?;
        let mut sizes = vec![first[1]];
        let mut params: Vec<f64> = Vec::new();
        for (l, shape) in self.shapes.iter().enumerate() {
            let [n_out, n_in] = *shape;
            if n_in != *sizes.last().unwrap_or(&0) {
                return Err(bad(format!("layer {l} input {n_in} breaks the shape chain")));
            }
            let w = self.weights.get(l).ok_or_else(|| bad(format!("layer {l} has no weights")))?;
            let b = self.biases.get(l).ok_or_else(|| bad(format!("layer {l} has no biases")))?;
            if w.len() != n_out || w.iter().any(|row| row.len() != n_in) || b.len() != n_out {
                return Err(bad(format!("layer {l} arrays do not match shape {shape:?}")));
            }
            params.extend(w.iter().flatten());
            params.extend(b);
            sizes.push(n_out);
        }
        if self.weights.len() != self.shapes.len() || self.biases.len() != self.shapes.len() {
            return Err(bad("layer count mismatch".into()));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(bad("non-finite parameter".into()));
        }
        Mlp::from_parts(sizes, params)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSnapshot {
    pub actor: AdamState,
    pub critic: AdamState,
    /// Optimizer updates since the old policy was last refreshed.
    pub since_sync: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub actor: NetworkSnapshot,
    pub critic: NetworkSnapshot,
    pub optimizer: OptimizerSnapshot,
    /// Observation pipeline the networks were trained with.
    pub obs_normalizer: Normalization,
}

impl Checkpoint {
    pub fn new(
        net: &ActorCritic,
        optimizer: OptimizerSnapshot,
        obs_normalizer: Normalization,
        meta: CheckpointMeta,
    ) -> Self {
        Self {
            meta,
            actor: NetworkSnapshot::from_mlp(&net.actor.net, Some(net.actor.log_std)),
            critic: NetworkSnapshot::from_mlp(&net.critic, None),
            optimizer,
            obs_normalizer,
        }
    }

    pub fn networks(&self) -> Result<ActorCritic> {
        let log_std = self
            .actor
            .log_std
            .ok_or_else(|| Error::config("checkpoint", "actor has no log_std"))?;
        let net = ActorCritic {
            actor: Actor {
                net: self.actor.to_mlp()?,
                log_std,
            },
            critic: self.critic.to_mlp()?,
        };
        if self.optimizer.actor.len() != net.actor.flat_len()
            || self.optimizer.critic.len() != net.critic.len()
        {
            return Err(Error::config("checkpoint", "optimizer state does not match networks"));
        }
        self.obs_normalizer.validate()?;
        Ok(net)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.networks()?;
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// SHA-256 of the compact JSON encoding of `value`, hex encoded.
pub fn hash_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Hash of the episode spec and PPO configuration together.
pub fn config_hash(spec: &EpisodeSpec, cfg: &PpoConfig) -> Result<String> {
    hash_json(&(spec, cfg))
}
