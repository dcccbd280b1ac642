//! Deterministic stream-splitting for reproducible experiments.
//!
//! Every randomized routine takes a `(seed, stream)` pair and derives an
//! independent ChaCha8 generator from it. Splitting by hashing the pair —
//! rather than drawing sub-seeds sequentially from one generator — means
//! sample k of stream s is the same no matter which other streams were used,
//! so prefix properties (e.g. "the first n samples of a larger batch match
//! the n-sample batch") hold by construction.

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

/// Derives a generator for `(seed, stream)` via two rounds of the splitmix64
/// output permutation, which decorrelates consecutive seeds and streams.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mixed = splitmix64(splitmix64(seed).wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(stream)));
    ChaCha8Rng::seed_from_u64(mixed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
