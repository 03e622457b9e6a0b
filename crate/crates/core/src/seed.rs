//! Seed derivation shared by every stochastic component.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives a 64-bit seed from a master seed and a list of labels.
///
/// Each label is length-prefixed so that `["ab", "c"]` and `["a", "bc"]`
/// never collide.
pub fn derive_seed(master: u64, labels: &[&str]) -> u64 {
    let digest = digest_labels(master, labels);
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// A ChaCha generator seeded from the full 256-bit digest of `(master, labels)`.
pub fn derive_rng(master: u64, labels: &[&str]) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(digest_labels(master, labels))
}

fn digest_labels(master: u64, labels: &[&str]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    for label in labels {
        hasher.update((label.len() as u64).to_le_bytes());
        hasher.update(label.as_bytes());
    }
    let out = hasher.finalize();
    let mut bytes = [0u8; 32];
    bytes.copy_from_slice(&out);
    bytes
}
