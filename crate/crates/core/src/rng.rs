//! Seed-stream derivation.
//!
//! Every randomized component (dataset sampling, parameter init, minibatch
//! selection, ...) owns its own deterministic stream derived from a user seed
//! and a stream tag, so changing one stream never perturbs the others.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; good avalanche for cheap seed mixing.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derive an independent sub-seed from `(seed, tag)`.
pub fn derive(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag.wrapping_mul(0xa076_1d64_78bd_642f)))
}

/// Deterministic RNG for a `(seed, tag)` stream.
pub fn stream(seed: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, tag))
}

/// Per-stage seed for the outer loop. Stage 1 reuses the base seed verbatim so
/// a one-stage run is bit-identical to a direct subproblem solve.
pub fn stage_seed(seed: u64, stage: usize) -> u64 {
    if stage <= 1 {
        seed
    } else {
        derive(seed, 0x5747_u64 + stage as u64)
    }
}

/// Stream tags used by the trainer and outer loop.
pub mod tags {
    pub const INIT: u64 = 1;
    pub const MINIBATCH: u64 = 2;
    pub const VALIDATION_SPLIT: u64 = 3;
    pub const GENERATE: u64 = 4;
    pub const NOISE_FLOOR: u64 = 5;
    pub const VALIDATION_BATCH: u64 = 6;
}
