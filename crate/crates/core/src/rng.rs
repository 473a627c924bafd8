//! Deterministic RNG substreams.
//!
//! Every stochastic routine in this crate draws from a stream derived from
//! `(seed, domain, index)`, so replicate `r` sees the same stream no matter
//! how many worker threads run or how many replicates precede it.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream domains, kept distinct so substreams never collide across uses.
pub mod domain {
    pub const FPC_SCORES: u64 = 0x5343_4f52;
    pub const NOISE: u64 = 0x4e4f_4953;
    pub const GP_SUBJECT: u64 = 0x4750_5342;
    pub const ZETA: u64 = 0x5a45_5441;
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed for a subsystem that manages its own substreams
/// (e.g. the multiplier simulation inside Monte-Carlo replicate `index`).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut state = seed
        .wrapping_mul(0xd129_0d3b_53b3_4d2d)
        .wrapping_add(index.wrapping_mul(0x2545_f491_4f6c_dd1d));
    splitmix64(&mut state)
}

/// Derive an independent ChaCha stream from `(seed, domain, index)`.
pub fn substream(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut state = seed ^ domain.wrapping_mul(0xa076_1d64_78bd_642f);
    state ^= index.wrapping_mul(0xe703_7ed1_a0b4_28db);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
