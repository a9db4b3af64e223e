//! Seeded randomness.
//!
//! Every random draw in the crate comes from ChaCha8 (`rand_chacha`) seeded by
//! `seed_from_u64(seed)` on a fixed stream number, so independent consumers
//! (weight init, shuffling, data synthesis) never share a sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STREAM_INIT: u64 = 0;
pub const STREAM_SHUFFLE: u64 = 1;
pub const STREAM_DATA: u64 = 2;
pub const STREAM_SPLIT: u64 = 3;
pub const STREAM_LANDSCAPE: u64 = 4;

pub fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
