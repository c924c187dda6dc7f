//! Counter-based seed derivation.
//!
//! Every random stream in the simulator is keyed by a `(parent, label, index)`
//! triple, so a master seed fully determines a run no matter how trials are
//! scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent child seed from a parent seed, a stream label and an index.
pub fn derive(parent: u64, label: u64, index: u64) -> u64 {
    let a = mix64(parent.wrapping_add(GOLDEN));
    let b = mix64(a ^ label.wrapping_mul(GOLDEN).wrapping_add(0x632B_E59B_D9B4_E019));
    mix64(b ^ index.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream labels, kept distinct so that unrelated consumers of one parent
/// seed never share a stream.
pub mod label {
    pub const STORE: u64 = 1;
    pub const QUERY: u64 = 2;
    pub const CHANNEL: u64 = 3;
    pub const NOISE_USER: u64 = 4;
    pub const NOISE_EVE: u64 = 5;
    pub const TRIAL: u64 = 6;
    pub const BLOCK: u64 = 7;
    pub const INDEX: u64 = 8;
    pub const PARTITION: u64 = 9;
}
