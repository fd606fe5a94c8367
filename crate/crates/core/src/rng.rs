//! Seeded random streams.
//!
//! Every consumer of randomness derives its generator from one user seed and a
//! fixed stream id, so batteries stay reproducible when run in any order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STREAM_MONOTONICITY: u64 = 1;
pub const STREAM_GROWTH: u64 = 2;
pub const STREAM_ENVELOPE: u64 = 3;
pub const STREAM_SOLVER_PROBE: u64 = 4;
pub const STREAM_PAIRING: u64 = 5;

pub fn stream(seed: u64, stream_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

/// Derives an independent sub-stream, e.g. one per inequality of a battery.
pub fn substream(seed: u64, stream_id: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(stream_id);
    rng
}
