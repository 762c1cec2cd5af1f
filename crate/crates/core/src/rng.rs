//! Seeded generators and seed derivation.
//!
//! Every stochastic component takes an explicit generator; nothing reads
//! thread-local or global randomness. Sub-seeds are derived with a
//! SplitMix64 finalizer so that independent streams (initialization,
//! training batches, evaluation sets, ...) never share state.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type Rng = Xoshiro256PlusPlus;

/// Purpose tags mixed into a trial seed to obtain independent streams.
pub mod stream {
    pub const INIT: u64 = 0x1001;
    pub const TRAIN: u64 = 0x1002;
    pub const VALIDATION: u64 = 0x1003;
    pub const TEST: u64 = 0x1004;
    pub const GEOMETRY: u64 = 0x1005;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, tag: u64) -> u64 {
    splitmix64(splitmix64(base) ^ tag.rotate_left(17))
}

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn derived(base: u64, tag: u64) -> Rng {
    seeded(derive_seed(base, tag))
}
