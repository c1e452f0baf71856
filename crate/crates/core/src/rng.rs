//! Deterministic stream derivation.
//!
//! Every randomized operation in the crate takes a single 64-bit seed and
//! derives independent child generators from it by hashing a path of integer
//! coordinates (seat index, placement, repetition, run number, ...). Records
//! can then be generated in parallel, in any order, while remaining
//! bit-reproducible: the child stream depends only on (seed, path), never on
//! scheduling.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer; a cheap, well-mixed u64 -> u64 permutation.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child generator from `seed` and an order-sensitive `path`.
///
/// Distinct paths give statistically independent streams; the same
/// (seed, path) pair always gives the same stream.
pub fn stream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    let mut state = mix(seed ^ 0xA076_1D64_78BD_642F);
    for &p in path {
        state = mix(state.wrapping_add(GOLDEN) ^ mix(p));
    }
    let mut key = [0u8; 32];
    let mut s = state;
    for chunk in key.chunks_mut(8) {
        s = s.wrapping_add(GOLDEN);
        chunk.copy_from_slice(&mix(s).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
