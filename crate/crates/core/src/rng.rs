//! Seed derivation for reproducible experiments.
//!
//! Every random component draws from its own ChaCha stream whose seed is
//! derived from a master seed, a stream label and a list of indices (node id,
//! event counter, ...). Two streams with different labels or indices never
//! share state, so enabling one randomized component does not reshuffle the
//! draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn label_hash(label: &str) -> u64 {
    // FNV-1a, stable across platforms and releases.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Derive a child seed from `seed`, a stream label and indices.
pub fn derive_seed(seed: u64, label: &str, indices: &[u64]) -> u64 {
    let mut s = splitmix(seed ^ label_hash(label));
    for &i in indices {
        s = splitmix(s ^ splitmix(i));
    }
    s
}

/// Open the named stream.
pub fn stream(seed: u64, label: &str, indices: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, label, indices))
}
