//! Seeded random streams.
//!
//! Every stochastic entity (initializer, noise source, sampler) draws from its
//! own ChaCha stream keyed by `(seed, tag)`, so results do not depend on the
//! order in which entities are evaluated.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags. Values are arbitrary but fixed; changing them changes every
/// seeded result.
pub mod tag {
    pub const SBM_EDGES: u64 = 1;
    pub const SBM_FEATURES: u64 = 2;
    pub const SPLIT_MASKS: u64 = 3;
    pub const FEATURE_SPLIT: u64 = 4;
    pub const CLIENT_INIT: u64 = 100;
    pub const SERVER_INIT: u64 = 200;
    pub const DP_NOISE: u64 = 300;
    pub const SHADOW_INIT: u64 = 400;
    pub const BASELINE: u64 = 500;
    pub const TARGETS: u64 = 600;
    pub const GENETIC: u64 = 700;
}

pub fn stream(seed: u64, tag: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng
}
