//! Seeded ChaCha8 streams; every random consumer takes an explicit (seed, stream) pair.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type ElkRng = ChaCha8Rng;

/// Stream ids for the independent consumers inside one replicate.
pub mod purpose {
    pub const DESIGN: u64 = 1;
    pub const FIELD: u64 = 2;
    pub const NUGGET: u64 = 3;
    pub const FIT: u64 = 4;
    pub const PREDICT: u64 = 5;
    pub const COVFN: u64 = 6;
    pub const BASELINE: u64 = 7;
}

pub fn stream_rng(seed: u64, stream: u64) -> ElkRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Generator for `purpose` within replicate `replicate`.
pub fn replicate_rng(seed: u64, replicate: u64, purpose: u64) -> ElkRng {
    stream_rng(seed, (replicate << 8) | purpose)
}
