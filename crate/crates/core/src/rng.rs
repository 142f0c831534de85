//! Seeded random streams. Every random draw in the crate goes through here so
//! results are reproducible across platforms for a given integer seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Independent stream for a `(seed, purpose)` pair.
pub fn stream(seed: u64, purpose: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng
}

pub(crate) mod purpose {
    pub const MEASUREMENT_NOISE: u64 = 1;
    pub const RANDOM_PHASE: u64 = 2;
    pub const INITIAL_NOISE: u64 = 3;
    pub const MASK: u64 = 4;
    pub const PHANTOM: u64 = 5;
    pub const SYNTH_PHASE: u64 = 6;
    pub const SENSITIVITY: u64 = 7;
    pub const CODEC_INIT: u64 = 8;
}
