//! Deterministic seed derivation.
//!
//! Every randomized stage draws from a `ChaCha8Rng` whose seed is derived
//! from a parent seed and a stable label, so changing one stage's
//! parameters never perturbs another stage's stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StageRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Child seed for a named stage.
pub fn derive(parent: u64, label: &str) -> u64 {
    splitmix64(parent ^ splitmix64(fnv1a(label.as_bytes())))
}

/// Child seed for the `index`-th item of a stream (trajectory, sequence, ...).
pub fn derive_indexed(parent: u64, index: u64) -> u64 {
    splitmix64(splitmix64(parent) ^ index.wrapping_mul(0xd1b5_4a32_d192_ed03))
}

pub fn rng(seed: u64) -> StageRng {
    ChaCha8Rng::seed_from_u64(seed)
}
