//! Rollout collection and the PPO update loop.

use std::io::Write;
use std::sync::atomic::{AtomicBool, Ordering};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::checkpoint::{config_hash, Checkpoint, CheckpointMeta, OptimizerSnapshot};
use super::gae::{gae, returns};
use super::loss::{ppo_loss, Batch, LossTerms};
use super::policy::{actor_forward, log_prob, sample_action, Actor, ActorCritic, LOG_STD_MAX, LOG_STD_MIN};
use super::PpoConfig;
use crate::env::{EpisodeSpec, V2gEnv};
use crate::error::{Error, Result};
use crate::seed;

/// Per-step rollout data from one worker.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    pub bootstrap: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: u64,
    /// Undiscounted, unscaled episode return.
    pub reward: f64,
    /// Trailing-window load variance at the last step.
    pub variance_kw2: f64,
    /// Mean loss terms of the update that consumed this episode.
    pub loss_terms: LossTerms,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum TrainStatus {
    Completed,
    /// Interrupted through the stop flag.
    Stopped,
    /// Non-finite loss or parameters; networks rolled back to the last checkpoint.
    Diverged { reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingReport {
    pub records: Vec<EpisodeRecord>,
    pub status: TrainStatus,
}

impl TrainingReport {
    pub fn rewards(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.reward).collect()
    }
}

/// One JSON object per line.
pub fn write_report_jsonl<W: Write>(mut writer: W, records: &[EpisodeRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut writer, r)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_report_jsonl(text: &str) -> Result<Vec<EpisodeRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

struct Rollout {
    trajectory: Trajectory,
    reward: f64,
    variance_kw2: f64,
}

/// Owns the networks, optimizer state and rollout environments.
pub struct Trainer {
    spec: EpisodeSpec,
    cfg: PpoConfig,
    net: ActorCritic,
    old_actor: Actor,
    opt_actor: AdamState,
    opt_critic: AdamState,
    since_sync: u64,
    episode: u64,
    iteration: u64,
    hash: String,
    created: u64,
    envs: Vec<V2gEnv>,
}

impl Trainer {
    pub fn new(spec: EpisodeSpec, cfg: PpoConfig) -> Result<Self> {
        cfg.validate()?;
        spec.validate()?;
        let mut rng = seed::stream_rng(seed::derive(cfg.seed, seed::TAG_INIT), 0);
        let net = ActorCritic::new(&cfg.hidden, cfg.init_log_std, &mut rng)?;
        Self::with_networks(spec, cfg, net, None, 0)
    }

    /// Continues from a checkpoint produced with the same networks.
    pub fn resume(spec: EpisodeSpec, cfg: PpoConfig, ckpt: &Checkpoint) -> Result<Self> {
        cfg.validate()?;
        let spec = EpisodeSpec {
            normalization: ckpt.obs_normalizer.clone(),
            ..spec
        };
        spec.validate()?;
        let net = ckpt.networks()?;
        Self::with_networks(spec, cfg, net, Some(ckpt.optimizer.clone()), ckpt.meta.episode)
    }

    fn with_networks(
        spec: EpisodeSpec,
        cfg: PpoConfig,
        net: ActorCritic,
        opt: Option<OptimizerSnapshot>,
        episode: u64,
    ) -> Result<Self> {
        if cfg.horizon != spec.length_slots {
            return Err(Error::config(
                "horizon",
                format!(
                    "must equal the episode length ({} slots)",
                    spec.length_slots
                ),
            ));
        }
        net.check_dims(crate::env::OBS_DIM)?;
        let hash = config_hash(&spec, &cfg)?;
        let envs = (0..cfg.actors)
            .map(|_| V2gEnv::new(spec.clone()))
            .collect::<Result<Vec<_>>>()?;
        let (opt_actor, opt_critic, since_sync) = match opt {
            Some(o) => (o.actor, o.critic, o.since_sync),
            None => (
                AdamState::new(net.actor.flat_len()),
                AdamState::new(net.critic.len()),
                0,
            ),
        };
        Ok(Self {
            old_actor: net.actor.clone(),
            net,
            opt_actor,
            opt_critic,
            since_sync,
            episode,
            iteration: episode / cfg.actors as u64,
            hash,
            created: 0,
            envs,
            spec,
            cfg,
        })
    }

    /// Timestamp written into checkpoint metadata.
    pub fn set_created(&mut self, unix_seconds: u64) {
        self.created = unix_seconds;
    }

    pub fn networks(&self) -> &ActorCritic {
        &self.net
    }

    pub fn old_actor(&self) -> &Actor {
        &self.old_actor
    }

    pub fn episode(&self) -> u64 {
        self.episode
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            &self.net,
            OptimizerSnapshot {
                actor: self.opt_actor.clone(),
                critic: self.opt_critic.clone(),
                since_sync: self.since_sync,
            },
            self.spec.normalization.clone(),
            CheckpointMeta {
                created: self.created,
                config_hash: self.hash.clone(),
                episode: self.episode,
            },
        )
    }

    fn restore(&mut self, ckpt: &Checkpoint) -> Result<()> {
        self.net = ckpt.networks()?;
        self.old_actor = self.net.actor.clone();
        self.opt_actor = ckpt.optimizer.actor.clone();
        self.opt_critic = ckpt.optimizer.critic.clone();
        self.since_sync = ckpt.optimizer.since_sync;
        Ok(())
    }

    /// Refreshes the old policy from the current actor.
    pub fn sync_old_policy(&mut self) {
        self.old_actor = self.net.actor.clone();
        self.since_sync = 0;
    }

    fn collect(&mut self, n: usize) -> Result<Vec<Rollout>> {
        let net = &self.net;
        let seed = self.cfg.seed;
        let scale = self.cfg.reward_scale;
        let horizon = self.cfg.horizon as usize;
        let first = self.episode;
        self.envs[..n]
            .par_iter_mut()
            .enumerate()
            .map(|(w, env)| {
                let ep = first + w as u64;
                let mut rng = seed::stream_rng(seed::derive(seed, seed::TAG_ROLLOUT), ep);
                let mut obs = env.reset(seed::derive(seed, ep))?;
                let mut t = Trajectory::default();
                let (mut reward, mut variance_kw2) = (0.0, 0.0);
                for _ in 0..horizon {
                    let x = obs.normalized;
                    let (mean, log_std) = actor_forward(&net.actor, &x)?;
                    let (a, lp) = sample_action(mean, log_std, &mut rng);
                    let v = net.value(&x)?;
                    let tr = env.step(a)?;
                    reward += tr.reward;
                    variance_kw2 = tr.info.variance_kw2;
                    t.observations.push(x);
                    t.actions.push(a);
                    t.log_probs.push(lp);
                    t.rewards.push(tr.reward * scale);
                    t.values.push(v);
                    t.dones.push(tr.done);
                    obs = tr.observation;
                    if tr.done {
                        break;
                    }
                }
                t.bootstrap = if t.dones.last() == Some(&true) {
                    0.0
                } else {
                    net.value(&obs.normalized)?
                };
                Ok(Rollout {
                    trajectory: t,
                    reward,
                    variance_kw2,
                })
            })
            .collect()
    }

    fn clip_norm(g: &mut [f64], max: Option<f64>) {
        if let Some(max) = max {
            let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > max {
                let s = max / norm;
                g.iter_mut().for_each(|x| *x *= s);
            }
        }
    }

    /// Collects one batch of episodes and runs the update epochs over it.
    pub fn iterate(&mut self) -> Result<Vec<EpisodeRecord>> {
        let remaining = self.cfg.episodes.saturating_sub(self.episode);
        let n = (self.cfg.actors as u64).min(remaining) as usize;
        if n == 0 {
            return Ok(Vec::new());
        }
        let rollouts = self.collect(n)?;

        let (mut obs, mut actions, mut advs, mut targets) = (vec![], vec![], vec![], vec![]);
        for r in &rollouts {
            let t = &r.trajectory;
            let a = gae(&t.rewards, &t.values, &t.dones, t.bootstrap, self.cfg.gamma, self.cfg.gae_lambda)?;
            targets.extend(returns(&a, &t.values));
            advs.extend(a);
            obs.extend(t.observations.iter().cloned());
            actions.extend(&t.actions);
        }
        if self.cfg.advantage_norm && advs.len() > 1 {
            let k = advs.len() as f64;
            let mean = advs.iter().sum::<f64>() / k;
            let std = (advs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / k).sqrt();
            for a in &mut advs {
                *a = (*a - mean) / (std + 1e-8);
            }
        }

        let coeffs = self.cfg.loss_coefficients();
        let frac = if self.cfg.lr_anneal {
            1.0 - self.episode as f64 / self.cfg.episodes as f64
        } else {
            1.0
        };
        let (lr_actor, lr_critic) = (self.cfg.lr_actor * frac, self.cfg.lr_critic * frac);
        let mut rng = seed::stream_rng(seed::derive(self.cfg.seed, seed::TAG_SHUFFLE), self.iteration);
        let mut order: Vec<usize> = (0..actions.len()).collect();
        let mut sum = LossTerms::default();
        let mut updates = 0usize;
        for _ in 0..self.cfg.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(self.cfg.minibatch) {
                let b_obs: Vec<Vec<f64>> = chunk.iter().map(|&i| obs[i].clone()).collect();
                let b_act: Vec<f64> = chunk.iter().map(|&i| actions[i]).collect();
                let b_adv: Vec<f64> = chunk.iter().map(|&i| advs[i]).collect();
                let b_tgt: Vec<f64> = chunk.iter().map(|&i| targets[i]).collect();
                let b_old = b_obs
                    .iter()
                    .zip(&b_act)
                    .map(|(o, &a)| {
                        let (m, s) = actor_forward(&self.old_actor, o)?;
                        Ok(log_prob(a, m, s))
                    })
                    .collect::<Result<Vec<f64>>>()?;
                let batch = Batch {
                    observations: &b_obs,
                    actions: &b_act,
                    old_log_probs: &b_old,
                    advantages: &b_adv,
                    value_targets: &b_tgt,
                };
                let (terms, mut grads) = ppo_loss(&self.net, &batch, &coeffs)?;
                Self::clip_norm(&mut grads.actor, self.cfg.max_grad_norm);
                Self::clip_norm(&mut grads.critic, self.cfg.max_grad_norm);

                let mut flat = self.net.actor.flat();
                adam_step(&mut flat, &grads.actor, &mut self.opt_actor, lr_actor)?;
                self.net.actor.set_flat(&flat);
                self.net.actor.log_std = self.net.actor.log_std.clamp(LOG_STD_MIN, LOG_STD_MAX);
                adam_step(
                    self.net.critic.params_mut(),
                    &grads.critic,
                    &mut self.opt_critic,
                    lr_critic,
                )?;
                if !self.net.is_finite() {
                    return Err(Error::Numerical("non-finite parameters after update".into()));
                }
                self.since_sync += 1;
                if self.since_sync >= self.cfg.old_policy_sync_steps {
                    self.sync_old_policy();
                }
                sum.loss += terms.loss;
                sum.surrogate += terms.surrogate;
                sum.value_loss += terms.value_loss;
                sum.entropy += terms.entropy;
                sum.clip_fraction += terms.clip_fraction;
                sum.approx_kl += terms.approx_kl;
                updates += 1;
            }
        }
        let k = updates.max(1) as f64;
        let mean_terms = LossTerms {
            loss: sum.loss / k,
            surrogate: sum.surrogate / k,
            value_loss: sum.value_loss / k,
            entropy: sum.entropy / k,
            clip_fraction: sum.clip_fraction / k,
            approx_kl: sum.approx_kl / k,
        };
        let records = rollouts
            .iter()
            .enumerate()
            .map(|(w, r)| EpisodeRecord {
                episode: self.episode + w as u64,
                reward: r.reward,
                variance_kw2: r.variance_kw2,
                loss_terms: mean_terms,
            })
            .collect();
        self.episode += n as u64;
        self.iteration += 1;
        Ok(records)
    }

    /// Runs until the episode budget is spent, `stop` is raised, or the
    /// update diverges. Checkpoints go to `sink`; the final one is always emitted.
    pub fn run(
        &mut self,
        sink: &mut dyn FnMut(&Checkpoint) -> Result<()>,
        stop: Option<&AtomicBool>,
        on_episode: &mut dyn FnMut(&EpisodeRecord),
    ) -> Result<TrainingReport> {
        let mut records = Vec::new();
        let mut last_good = self.checkpoint();
        let every = self.cfg.checkpoint_every;
        let mut status = TrainStatus::Completed;
        while self.episode < self.cfg.episodes {
            if stop.is_some_and(|s| s.load(Ordering::Relaxed)) {
                status = TrainStatus::Stopped;
                break;
            }
            let before = self.episode;
            match self.iterate() {
                Ok(batch) => {
                    for r in &batch {
                        on_episode(r);
                    }
                    records.extend(batch);
                }
                Err(Error::Numerical(reason)) => {
                    log::error!("training diverged at episode {}: {reason}", self.episode);
                    self.restore(&last_good)?;
                    self.episode = last_good.meta.episode;
                    status = TrainStatus::Diverged { reason };
                    break;
                }
                Err(e) => return Err(e),
            }
            last_good = self.checkpoint();
            if every > 0 && before / every != self.episode / every && self.episode < self.cfg.episodes {
                sink(&last_good)?;
            }
        }
        sink(&self.checkpoint())?;
        Ok(TrainingReport { records, status })
    }
}

/// Trains from scratch with no stop flag.
pub fn train(
    spec: &EpisodeSpec,
    cfg: &PpoConfig,
    sink: &mut dyn FnMut(&Checkpoint) -> Result<()>,
) -> Result<(TrainingReport, Checkpoint)> {
    let mut t = Trainer::new(spec.clone(), cfg.clone())?;
    let report = t.run(sink, None, &mut |_| {})?;
    Ok((report, t.checkpoint()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    fn small_cfg(episodes: u64) -> PpoConfig {
        PpoConfig {
            episodes,
            hidden: vec![16],
            lr_actor: 1e-3,
            lr_critic: 1e-3,
            reward_scale: 1e-3,
            actors: 2,
            seed: 4,
            ..PpoConfig::default()
        }
    }

    fn spec() -> EpisodeSpec {
        presets::baseload_spec(10)
    }

    #[test]
    fn zero_episodes_emit_initial_checkpoint() {
        let mut saved = Vec::new();
        let (report, ck) = train(&spec(), &small_cfg(0), &mut |c| {
            saved.push(c.clone());
            Ok(())
        })
        .unwrap();
        assert!(report.records.is_empty());
        assert_eq!(report.status, TrainStatus::Completed);
        assert_eq!(saved.len(), 1);
        assert_eq!(saved[0], ck);
        assert_eq!(ck.meta.episode, 0);
    }

    #[test]
    fn smoke_run_is_finite_and_reproducible() {
        let run = || train(&spec(), &small_cfg(40), &mut |_| Ok(())).unwrap();
        let (a, ca) = run();
        let (b, cb) = run();
        assert_eq!(a.records.len(), 40);
        assert!(a.records.iter().all(|r| r.reward.is_finite() && r.variance_kw2.is_finite()));
        assert_eq!(a, b);
        assert_eq!(ca.to_json().unwrap(), cb.to_json().unwrap());
        let episodes: Vec<u64> = a.records.iter().map(|r| r.episode).collect();
        assert_eq!(episodes, (0..40).collect::<Vec<_>>());
    }

    #[test]
    fn ratios_are_one_right_after_sync() {
        let mut t = Trainer::new(spec(), small_cfg(8)).unwrap();
        t.iterate().unwrap();
        t.sync_old_policy();
        let mut env = V2gEnv::new(spec()).unwrap();
        let mut obs = env.reset(2).unwrap();
        for k in 0..10 {
            let (m, s) = actor_forward(&t.networks().actor, &obs.normalized).unwrap();
            let (mo, so) = actor_forward(t.old_actor(), &obs.normalized).unwrap();
            let a = (k as f64) / 10.0;
            let r = (log_prob(a, m, s) - log_prob(a, mo, so)).exp();
            assert!((r - 1.0).abs() < 1e-12);
            obs = env.step(a).unwrap().observation;
        }
    }

    #[test]
    fn stop_flag_ends_early() {
        let stop = AtomicBool::new(true);
        let mut t = Trainer::new(spec(), small_cfg(100)).unwrap();
        let r = t.run(&mut |_| Ok(()), Some(&stop), &mut |_| {}).unwrap();
        assert_eq!(r.status, TrainStatus::Stopped);
        assert!(r.records.is_empty());
    }

    #[test]
    fn horizon_must_match_episode() {
        let cfg = PpoConfig {
            horizon: 5,
            ..small_cfg(1)
        };
        assert!(matches!(Trainer::new(spec(), cfg), Err(Error::Config { .. })));
    }

    #[test]
    fn report_jsonl_round_trip() {
        let (r, _) = train(&spec(), &small_cfg(4), &mut |_| Ok(())).unwrap();
        let mut buf = Vec::new();
        write_report_jsonl(&mut buf, &r.records).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert_eq!(read_report_jsonl(&text).unwrap(), r.records);
    }
}
