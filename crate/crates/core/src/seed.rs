//! Deterministic seed derivation.
//!
//! All randomness in a run flows from one root seed. Components get their
//! own stream by mixing a label into the root with FNV-1a and a SplitMix64
//! finalizer, so adding a component never shifts another component's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn derive_seed(root: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(root ^ h)
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The generator used everywhere in the crate. ChaCha8 output is stable
/// across platforms and crate versions.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
