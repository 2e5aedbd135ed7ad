//! Deterministic seed derivation. Every random stream in the crate is keyed
//! by a base seed plus string labels, so results never depend on scheduling
//! or iteration order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

fn digest(seed: u64, parts: &[&str]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    h.finalize().into()
}

/// A 64-bit seed derived from `seed` and `parts`.
pub fn derive_seed(seed: u64, parts: &[&str]) -> u64 {
    let d = digest(seed, parts);
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// A ChaCha stream keyed by `seed` and `parts`.
pub fn rng_for(seed: u64, parts: &[&str]) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(digest(seed, parts))
}

/// A uniform draw in `[0, 1)` that depends only on its key.
pub fn keyed_uniform(seed: u64, parts: &[&str]) -> f64 {
    (derive_seed(seed, parts) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
