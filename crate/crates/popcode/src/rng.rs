//! Seeded RNG streams.
//!
//! Every stochastic routine in this crate takes either an explicit `Rng` or a
//! `u64` seed. Monte Carlo loops derive one independent stream per trial from
//! `(base seed, trial index)` so that results do not depend on evaluation
//! order and parallel schedules reproduce the sequential result bit for bit.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent RNG stream `stream` under a common base seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Deterministically derive a child seed from `(seed, tag)`.
///
/// SplitMix64 finalizer; used to give nested procedures (per-user fits,
/// clustering restarts) seed spaces that do not collide with the per-trial
/// streams of their callers.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
