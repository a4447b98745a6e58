//! Seeded random streams. Every draw is keyed by `(seed, stream)`, so results
//! do not depend on how trials are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Maximum number of components per noise family in one trial.
pub const MAX_COMPONENTS: usize = 128;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream of the `c`-th fBm component of a trial.
pub fn fbm_stream(trial: u64, c: usize) -> u64 {
    trial * 2 * MAX_COMPONENTS as u64 + c as u64
}

/// Stream of the `c`-th Brownian component of a trial.
pub fn bm_stream(trial: u64, c: usize) -> u64 {
    trial * 2 * MAX_COMPONENTS as u64 + (MAX_COMPONENTS + c) as u64
}

/// Derives an independent seed for a sub-experiment (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
