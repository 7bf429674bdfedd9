//! Deterministic random streams.
//!
//! Every random consumer receives its own stream derived from a single root
//! seed and a label, so adding or removing one consumer never shifts the
//! numbers drawn by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Create a deterministic generator from a seed.
pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive a child seed for the stream named `label`.
pub fn derive(root: u64, label: &str) -> u64 {
    // FNV-1a over the label, then a splitmix64 finaliser over the mix.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix(root ^ splitmix(h))
}

/// Derive a child seed for the `index`-th member of a family of streams.
pub fn derive_indexed(root: u64, label: &str, index: u64) -> u64 {
    splitmix(derive(root, label).wrapping_add(splitmix(index.wrapping_add(1))))
}

fn splitmix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
