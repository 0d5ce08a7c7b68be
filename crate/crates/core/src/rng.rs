//! Seed derivation and the crate's deterministic RNG.
//!
//! Every stochastic routine takes an explicit `u64` seed and draws from its
//! own [`ChaCha8Rng`] stream. Sub-tasks (replicates, folds, fields, learner
//! targets) derive child seeds with [`derive_seed`], so results are
//! independent of scheduling: a replicate produces the same bytes whether it
//! runs serially or on a worker thread.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; good avalanche behavior for seed mixing.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a master seed and a salt path.
///
/// Distinct salt paths give (for all practical purposes) independent streams.
pub fn derive_seed(master: u64, salts: &[u64]) -> u64 {
    let mut state = splitmix64(master);
    for &s in salts {
        state = splitmix64(state ^ splitmix64(s));
    }
    state
}

/// Construct the crate's standard RNG from a seed.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
