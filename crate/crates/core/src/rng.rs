//! Seeded random streams.
//!
//! Every stochastic step derives its own generator from the global seed and a
//! small tuple of identifiers (unit id, mode, purpose tag). Results therefore
//! do not depend on the order in which work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Purpose tags mixed into derived seeds.
pub mod tag {
    pub const SIGNALS: u64 = 0x5349_474e;
    pub const FAILURE: u64 = 0x4641_494c;
    pub const COEFFICIENTS: u64 = 0x434f_4546;
    pub const COVARIATES: u64 = 0x434f_5641;
    pub const CENSORING: u64 = 0x4345_4e53;
    pub const RESTART: u64 = 0x5253_5452;
    pub const ELBO_PATHS: u64 = 0x454c_424f;
    pub const PREDICT: u64 = 0x5052_4544;
    pub const MIXTURE: u64 = 0x4d49_5854;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with a sequence of identifiers into a new 64-bit seed.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream(seed: u64, parts: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(seed, parts))
}
