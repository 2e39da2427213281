//! Seed derivation for reproducible, independently streamed randomness.
//!
//! Every randomized operation in this crate owns its RNG state, seeded from a
//! caller-provided master seed. Sub-streams (bootstrap draws, trials, Nyström
//! plans) derive their seeds with [`derive_seed`], a SplitMix64 mix of the
//! master seed, a stream tag, and an index. Distinct (tag, index) pairs give
//! statistically independent streams, and everything is bitwise reproducible.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags used by this crate; callers embedding the library can use any
/// other values without colliding with internal streams.
pub mod stream {
    pub const WILD_WEIGHTS: u64 = 0x57;
    pub const NYSTROM_PLAN: u64 = 0x4e;
    pub const MEDIAN_PAIRS: u64 = 0x4d;
}

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the seed of sub-stream (`tag`, `index`) from a master seed.
pub fn derive_seed(master: u64, tag: u64, index: u64) -> u64 {
    let a = splitmix64(master.wrapping_add(GOLDEN_GAMMA));
    let b = splitmix64(a ^ splitmix64(tag.wrapping_mul(GOLDEN_GAMMA).wrapping_add(1)));
    splitmix64(b ^ index.wrapping_mul(GOLDEN_GAMMA))
}

/// The deterministic generator used throughout the crate.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
