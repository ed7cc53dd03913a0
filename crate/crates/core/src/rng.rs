//! Named random streams derived from a single top-level seed.
//!
//! Each consumer asks for a stream by name; the stream seed is a hash of the
//! root seed and the name, so adding a new consumer never shifts the values
//! drawn by existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

/// Derive the 64-bit seed of the stream `name` under `root`.
pub fn stream_seed(root: u64, name: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn stream(root: u64, name: &str) -> StreamRng {
    ChaCha8Rng::seed_from_u64(stream_seed(root, name))
}
