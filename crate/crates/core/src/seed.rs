//! Seed derivation.
//!
//! Every random stream in a run is keyed off the global seed plus a path of
//! integer tags (repeat, stage, item). Streams never depend on scheduling, so
//! results are identical for any worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix `tags` into `base`, producing an independent-looking 64-bit seed.
pub fn derive(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix(base), |acc, &t| splitmix(acc ^ splitmix(t)))
}

/// Seed keyed by a set of indices; order of `indices` matters, so callers pass
/// them sorted.
pub fn derive_from_indices(base: u64, indices: &[usize]) -> u64 {
    let mut acc = splitmix(base ^ indices.len() as u64);
    for &i in indices {
        acc = splitmix(acc ^ (i as u64).wrapping_mul(GOLDEN));
    }
    acc
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stage tags, so the same repeat seed fans out into unrelated streams.
pub mod stage {
    pub const SPLIT: u64 = 1;
    pub const CORRUPTION: u64 = 2;
    pub const CORPUS: u64 = 3;
    pub const UTILITY_FIT: u64 = 4;
    pub const SELECTION: u64 = 5;
    pub const TARGET: u64 = 6;
    pub const PLANTED: u64 = 7;
    pub const FILTER: u64 = 8;
    pub const DIAGNOSTICS: u64 = 9;
    pub const DATASET: u64 = 10;
}
