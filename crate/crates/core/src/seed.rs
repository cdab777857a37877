//! Seed derivation.
//!
//! Every random stream in the pipeline is a `ChaCha8Rng` seeded from a parent
//! seed mixed with one or more tags through SplitMix64. Streams derived with
//! different tags are independent, and the same `(seed, tags)` tuple always
//! produces the same stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags used across the crate.
pub mod tag {
    pub const DATASET: u64 = 0x4441_5441;
    pub const ATLAS: u64 = 0x4154_4c53;
    pub const RECORDS: u64 = 0x5245_4344;
    pub const VOLUME: u64 = 0x564f_4c4d;
    pub const MODEL_INIT: u64 = 0x4d49_4e49;
    pub const TEACHER_TRAIN: u64 = 0x5454_524e;
    pub const NOISE: u64 = 0x4e4f_4953;
    pub const STUDENT_INIT: u64 = 0x5349_4e49;
    pub const STUDENT_TRAIN: u64 = 0x5354_524e;
    pub const EXTRACT: u64 = 0x4558_5452;
    pub const OCCLUDE: u64 = 0x4f43_434c;
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix `parts` into `seed`, order-sensitively.
pub fn derive(seed: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// 64-bit FNV-1a, used to key noise streams by subject id.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
