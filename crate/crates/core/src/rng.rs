//! Seed derivation. Every random stream is keyed so that subsystems can be
//! reproduced independently of one another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream labels fanned out from the master seed.
pub const MODEL_INIT: &str = "model-init";
pub const SHUFFLE: &str = "shuffle";
pub const DUMMY_INIT: &str = "dummy-init";
pub const BO: &str = "bo";
pub const DATASET: &str = "dataset";

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes an ordered list of words into one seed.
pub fn keyed_seed(words: &[u64]) -> u64 {
    words.iter().fold(0x243f_6a88_85a3_08d3, |acc, &w| {
        splitmix64(acc ^ splitmix64(w))
    })
}

/// Seed of the labeled stream `label` under `master`.
pub fn stream_seed(master: u64, label: &str) -> u64 {
    // FNV-1a of the label
    let h = label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x100_0000_01b3)
    });
    keyed_seed(&[master, h])
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
