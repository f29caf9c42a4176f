//! Seeded random streams.
//!
//! Every random decision in the engine draws from a ChaCha stream keyed by a
//! user seed plus a stream id, so that independent phases (candidate batches,
//! forest bootstraps, observation noise) never share state and can be
//! replayed in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type EngineRng = ChaCha8Rng;

/// Stream purposes. Combined with an iteration index to form a stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Candidates = 1,
    Surrogate = 2,
    Greedy = 3,
    RandomConfig = 4,
    Noise = 5,
    Metrics = 6,
    Structure = 7,
    Predictors = 8,
    Classifiers = 9,
}

pub fn rng_for(seed: u64, stream: u64) -> EngineRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn stream_rng(seed: u64, index: u64, purpose: Purpose) -> EngineRng {
    rng_for(seed, (index << 8) | purpose as u64)
}

/// Derive a child seed from a stream, for APIs that take a plain `u64` seed.
pub fn derive_seed(seed: u64, index: u64, purpose: Purpose) -> u64 {
    use rand::RngCore;
    stream_rng(seed, index, purpose).next_u64()
}
