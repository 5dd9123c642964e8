//! Deterministic seed derivation.
//!
//! Every random choice in the toolkit draws from a ChaCha stream seeded by
//! hashing a parent seed together with a path of string tags, so results do
//! not depend on thread scheduling or iteration order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives a child seed from `parent` and a tag path.
pub fn derive(parent: u64, tags: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(parent.to_le_bytes());
    for tag in tags {
        hasher.update((tag.len() as u64).to_le_bytes());
        hasher.update(tag.as_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest is 32 bytes"))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(parent: u64, tags: &[&str]) -> ChaCha8Rng {
    rng(derive(parent, tags))
}
