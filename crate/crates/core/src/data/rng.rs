//! Deterministic random streams.
//!
//! All randomness comes from ChaCha8 (a counter-based generator) keyed by a
//! 64-bit seed; independent consumers get independent stream ids, so results
//! never depend on the order in which parallel workers draw.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub const GENERATOR: &str = "chacha8";

pub fn stream(seed: u64, stream_id: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

/// Stream id for image `index` within `epoch`.
pub fn image_stream(epoch: usize, index: usize) -> u64 {
    ((epoch as u64) << 32) | index as u64
}
