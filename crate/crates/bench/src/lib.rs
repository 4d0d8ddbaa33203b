//! Fixtures shared by the benchmarks.

use v2g_core::env::{EpisodeSpec, MdpObservation, V2gEnv};
use v2g_core::ppo::{ActorCritic, PpoConfig};
use v2g_core::seed::stream_rng;
use v2g_core::Result;

/// Environment advanced to 22:00, when the whole fleet is parked.
pub fn parked_env(spec: EpisodeSpec, seed: u64) -> Result<(V2gEnv, MdpObservation)> {
    let mut env = V2gEnv::new(spec)?;
    let mut obs = env.reset(seed)?;
    while env.hour() != 22 {
        obs = env.step(0.5)?.observation;
    }
    Ok((env, obs))
}

/// Freshly initialised networks with the default layer sizes.
pub fn networks(seed: u64) -> Result<ActorCritic> {
    let cfg = PpoConfig::default();
    ActorCritic::new(&cfg.hidden, cfg.init_log_std, &mut stream_rng(seed, 0))
}
