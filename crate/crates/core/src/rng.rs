//! Seed handling.
//!
//! Every stochastic operation draws from its own [`ChaCha8Rng`] stream. A
//! stream is identified by a master seed and a stage name; the stream seed is
//! the first eight bytes (little endian) of `SHA-256(master_le_bytes || name)`.
//! Streams for different stages therefore never interleave, and the mapping
//! is stable across platforms and releases.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Derives the child seed for `stage` from `master`.
pub fn child_seed(master: u64, stage: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(stage.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Generator for the named stage of a run seeded with `master`.
pub fn stream(master: u64, stage: &str) -> Rng {
    Rng::seed_from_u64(child_seed(master, stage))
}

/// Fisher-Yates shuffle of `0..n` driven by `rng`.
pub(crate) fn permutation(n: usize, rng: &mut Rng) -> Vec<usize> {
    use rand::Rng as _;
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}
