//! Deterministic seed splitting.
//!
//! Every random draw in the runtime comes from a `ChaCha8Rng` seeded through
//! [`derive`]. The split is a SHA-256 over the base seed and an ordered list
//! of string tags, so streams are stable across platforms and releases, and
//! any (trial, node, attempt, purpose) combination gets an independent
//! stream. Changing any single tag decorrelates the stream.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Split `base` into an independent stream identified by `tags`.
pub fn derive(base: u64, tags: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    for tag in tags {
        // Length-prefix each tag so ["ab","c"] and ["a","bc"] differ.
        h.update((tag.len() as u64).to_le_bytes());
        h.update(tag.as_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// RNG for the stream identified by `tags`.
pub fn rng(base: u64, tags: &[&str]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(base, tags))
}
