//! Seed derivation.
//!
//! Every random stream in the engine is a `ChaCha8Rng` seeded from a 64-bit
//! value. Child streams are derived from a parent seed and a counter through
//! the SplitMix64 finalizer, so a replication's randomness depends only on
//! `(master_seed, index)` and never on which worker ran it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags for the sub-streams of a single replication.
pub(crate) mod tag {
    pub const POPULATION: u64 = 0x01;
    pub const ENROLLMENT: u64 = 0x02;
    pub const SAMPLING: u64 = 0x03;
    pub const EXECUTION: u64 = 0x04;
    pub const ANALYSIS: u64 = 0x05;
    pub const COVARIATES: u64 = 0x06;
    pub const OUTCOME: u64 = 0x07;
    pub const ACCEPTANCE: u64 = 0x08;
    pub const BIOMARKER: u64 = 0x09;
    pub const PRIOR_TRIALS: u64 = 0x0a;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the seed of child stream `index` from `parent`.
pub fn derive_seed(parent: u64, index: u64) -> u64 {
    splitmix64(splitmix64(parent) ^ index.wrapping_mul(0xd605_bbb5_8c8a_bbcb))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
