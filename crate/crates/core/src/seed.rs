//! Deterministic seed derivation.
//!
//! Every stochastic operation takes one base seed; sub-streams (sweep
//! cells, Monte-Carlo chunks, batches) derive their own seeds through
//! [`mix`] so results are reproducible and independent of worker count.
//! The hash is the SplitMix64 finalizer applied twice:
//!
//! ```text
//! mix(base, a, b) = fin(fin(base ^ a*0x9E3779B97F4A7C15) ^ b*0xBF58476D1CE4E5B9)
//! fin(z) = h(z + 0x9E3779B97F4A7C15)   with h the SplitMix64 output mix
//! ```

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const MIX_B: u64 = 0xBF58_476D_1CE4_E5B9;

/// SplitMix64 output finalizer.
#[inline]
pub fn splitmix64(seed: u64) -> u64 {
    let mut z = seed.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent sub-seed from a base seed and two stream labels.
#[inline]
pub fn mix(base: u64, a: u64, b: u64) -> u64 {
    splitmix64(splitmix64(base ^ a.wrapping_mul(GOLDEN)) ^ b.wrapping_mul(MIX_B))
}

/// Sub-seed for chunk `index` of a chunked Monte-Carlo run.
#[inline]
pub fn chunk_seed(base: u64, index: u64) -> u64 {
    mix(base, index, 0x43_48_55_4E_4B) // "CHUNK"
}

/// The crate's generator: seedable, fast, with a documented stream.
pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
