//! Seeded random streams.
//!
//! Every stochastic component draws from its own ChaCha stream derived from a
//! master seed and a stream tag, so adding draws in one component never shifts
//! another.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes a stream tag into a seed (splitmix64 finaliser).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, tag: u64) -> SeededRng {
    seeded(derive_seed(seed, tag))
}

pub fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub mod streams {
    pub const DATA_TRAIN: u64 = 1;
    pub const DATA_VAL: u64 = 2;
    pub const DATA_TEST: u64 = 3;
    pub const INIT_CLASSIFIER: u64 = 10;
    pub const INIT_ADVERSARY_F: u64 = 11;
    pub const INIT_ADVERSARY_G: u64 = 12;
    pub const BATCHES: u64 = 20;
    pub const PERMUTATIONS: u64 = 30;
}
