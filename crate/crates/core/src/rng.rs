//! Seed derivation helpers.
//!
//! Every stochastic component in the crate takes an explicit `u64` seed and
//! derives independent streams from it, so that a single top-level seed
//! reproduces a whole run bit-for-bit regardless of which subset of stages
//! executes.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 step, used to mix seed material.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a base seed, a stream tag, and an index.
///
/// The tag keeps unrelated consumers (weight init, data shuffling, noise
/// draws, ...) on disjoint streams even when they share a base seed.
pub fn derive_seed(base: u64, tag: &str, index: u64) -> u64 {
    let mut state = base ^ 0x517c_c1b7_2722_0a95;
    let mut out = splitmix64(&mut state);
    for &b in tag.as_bytes() {
        state ^= u64::from(b);
        out ^= splitmix64(&mut state);
    }
    state ^= index;
    out ^ splitmix64(&mut state)
}

/// Seeded deterministic RNG used throughout the crate.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// RNG for a tagged sub-stream of a base seed.
pub fn stream_rng(base: u64, tag: &str, index: u64) -> ChaCha8Rng {
    rng_from_seed(derive_seed(base, tag, index))
}
