//! Deterministic seed derivation.
//!
//! Every random stream in the crate comes from a `ChaCha20Rng` seeded with a
//! `u64`. Independent streams (data for replication `i`, bootstrap multipliers
//! for replication `i`, column subsampling, ...) get their seeds from one
//! master seed through [`derive_seed`], a counter-based SplitMix64 mix, so
//! replications can run in any order and still reproduce bit-for-bit.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Stream tags used by the crate.
pub mod stream {
    pub const PARAMS: u64 = 1;
    pub const DATA: u64 = 2;
    pub const MULTIPLIERS: u64 = 3;
    pub const SUBSAMPLE: u64 = 4;
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `splitmix64(splitmix64(master ^ splitmix64(stream)) ^ index * GOLDEN)`.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    let z = splitmix64(master ^ splitmix64(stream));
    splitmix64(z ^ index.wrapping_mul(GOLDEN))
}

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}
