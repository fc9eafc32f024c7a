//! Reproducible random streams.
//!
//! Every random consumer in the crate draws from a ChaCha8 generator keyed by a
//! 64-bit seed and a 64-bit stream id. ChaCha is counter based: distinct stream
//! ids give non-overlapping keystreams for the same seed, so batch replicates and
//! EM starts are independent by construction and do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Generator for `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream ids reserved per consumer so that, e.g., imputation draws never alias
/// simulation draws under the same user seed.
pub mod streams {
    pub const SIMULATION_BASE: u64 = 0;
    pub const FIT_STARTS_BASE: u64 = 1 << 32;
    pub const IMPUTATION: u64 = 2 << 32;
    pub const SPECTRAL: u64 = 3 << 32;
}
