//! Named random streams split from a single run seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent stream of a run's randomness.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    Reparam = 3,
    Dropout = 4,
    Data = 5,
    Eval = 6,
    Classifier = 7,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Stream further keyed by an index (epoch, repetition, ...).
pub fn indexed_rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mixed = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    stream_rng(mixed, stream)
}
