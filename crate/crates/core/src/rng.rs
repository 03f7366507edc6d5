//! Seed derivation. Every random stream in the crate is a ChaCha20 generator whose
//! seed is the SHA-256 of (root seed, purpose tag, index), so independent consumers
//! never share a stream and results do not depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha20Rng;

pub fn derive_seed(seed: u64, tag: &str, index: u64) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(b"histmark-rng-v1");
    hasher.update(seed.to_le_bytes());
    hasher.update((tag.len() as u64).to_le_bytes());
    hasher.update(tag.as_bytes());
    hasher.update(index.to_le_bytes());
    hasher.finalize().into()
}

pub fn stream(seed: u64, tag: &str, index: u64) -> Rng {
    Rng::from_seed(derive_seed(seed, tag, index))
}

/// A child seed, for APIs that take a plain `u64`.
pub fn child_seed(seed: u64, tag: &str, index: u64) -> u64 {
    let bytes = derive_seed(seed, tag, index);
    u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
}
