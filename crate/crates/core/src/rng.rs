//! Keyed random streams. Every stochastic decision (Gumbel noise for a
//! chart cell, a dropout mask for one composition) draws from its own
//! stream derived from a run seed and a structural key, so results do not
//! depend on evaluation order or thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const TAG_GUMBEL: u64 = 1;
pub const TAG_DROPOUT: u64 = 2;
pub const TAG_CLOZE: u64 = 3;
pub const TAG_SENTENCE: u64 = 4;
pub const TAG_SHUFFLE: u64 = 5;
pub const TAG_INIT: u64 = 6;

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `seed` and a key path.
pub fn derive_seed(seed: u64, key: &[u64]) -> u64 {
    key.iter().fold(mix(seed), |h, &k| mix(h ^ mix(k)))
}

pub fn stream_rng(seed: u64, key: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, key))
}
