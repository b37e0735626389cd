//! Seeded random substreams.
//!
//! Every stochastic site derives its own stream from the run seed plus a
//! path of integer tags (e.g. step, prompt index, group member), so results
//! do not depend on evaluation order or scheduling.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; good avalanche for tag mixing.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derives a stream from `seed` and a tag path. Identical (seed, path)
/// pairs always yield identical streams.
pub fn substream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    let mut state = mix(seed ^ 0x5bf0_3635_dec8_f618);
    for &tag in path {
        state = mix(state ^ mix(tag));
    }
    ChaCha8Rng::seed_from_u64(state)
}

/// Stream tags for the trainer and data generator, kept in one place so the
/// derivations cannot collide.
pub mod tags {
    pub const DATA_TRAIN: u64 = 1;
    pub const DATA_TEST: u64 = 2;
    pub const DATA_EXPLORE: u64 = 3;
    pub const SFT_INIT: u64 = 10;
    pub const SFT_SHUFFLE: u64 = 11;
    pub const SFT_TARGET: u64 = 12;
    pub const RL_PROMPTS: u64 = 20;
    pub const RL_ROLLOUT: u64 = 21;
}
