//! Seeded random streams.
//!
//! Every independent unit of work (a trajectory, a Monte-Carlo batch) draws
//! from its own ChaCha stream derived from `(seed, stream)`, so results do
//! not depend on the order or grouping in which the units are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// A generator for stream `stream` of the run seeded by `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Packs a few small counters into one stream id.
pub fn stream_id(tag: u8, step: u64, index: u64) -> u64 {
    ((tag as u64) << 56) ^ (step << 24) ^ index
}
