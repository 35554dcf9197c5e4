//! Counter-based random streams.
//!
//! Every sampler draws path `i` from its own ChaCha stream keyed by
//! `(seed, tag, i)`, so an ensemble is a pure function of the seed and the
//! path index no matter how the work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags. Distinct samplers inside one experiment never share a stream.
pub mod tag {
    pub const FBM: u64 = 0x0001;
    pub const FOU: u64 = 0x0002;
    pub const MARKOV: u64 = 0x0003;
    pub const VOLTERRA: u64 = 0x0004;
    pub const LIMIT_DRIVER: u64 = 0x0005;
    pub const PAIRS: u64 = 0x0006;
    pub const PROJECTIONS: u64 = 0x0007;
    pub const NESTED_MC: u64 = 0x0008;
    pub const BOOTSTRAP: u64 = 0x0009;
    pub const TEST: u64 = 0x00ff;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an experiment-level sub-seed, e.g. one per epsilon in a schedule.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    splitmix64(seed ^ splitmix64(salt.wrapping_add(0xA076_1D64_78BD_642F)))
}

/// Independent stream for `(seed, tag, index)`.
pub fn stream(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, tag));
    rng.set_stream(index);
    rng
}
