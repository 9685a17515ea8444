//! Seeded randomness.
//!
//! Every random draw in the project comes from ChaCha8 seeded with the run's root
//! seed. Independent consumers (data, initialisation, dropout, patch placement, ...)
//! use distinct ChaCha stream ids, so changing how much randomness one consumer
//! draws never shifts the values another one sees.

use rand::{RngCore, SeedableRng};
pub use rand_chacha::ChaCha8Rng;

/// Named substreams of the root seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum Stream {
    TrainData = 1,
    EvalData = 2,
    Init = 3,
    Dropout = 4,
    Patches = 5,
    Permutation = 6,
    Shuffle = 7,
}

/// Generator for substream `stream`, slot `index`, of `seed`.
pub fn substream(seed: u64, stream: Stream, index: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 32) | index as u64);
    rng
}

/// A fresh 64-bit seed drawn from a substream; used to hand child components a
/// seed that can be recorded alongside them.
pub fn derive_seed(seed: u64, stream: Stream, index: u32) -> u64 {
    substream(seed, stream, index).next_u64()
}
