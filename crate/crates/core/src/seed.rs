//! Seed derivation for independent, reproducible random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Combines a parent seed with a tag into a child seed.
pub fn derive(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag))
}

/// A ChaCha8 stream keyed by `seed`, on stream number `stream`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) const TAG_FLEET_DAY: u64 = 0x666c_6565_7464_6179;
pub(crate) const TAG_NOISE: u64 = 0x6e6f_6973_6500_0000;
pub(crate) const TAG_INIT: u64 = 0x696e_6974_0000_0000;
pub(crate) const TAG_ROLLOUT: u64 = 0x726f_6c6c_6f75_7400;
pub(crate) const TAG_SHUFFLE: u64 = 0x7368_7566_666c_6500;
