//! Counter-based deterministic random streams.
//!
//! Every random draw in the crate comes from a ChaCha stream keyed by a
//! purpose label and up to four integers (seed, stream, step, channel),
//! hashed through SHA-256.  Results are therefore independent of execution
//! order and thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

pub fn keyed(purpose: &str, seed: u64, stream: u64, step: u64, channel: u64) -> ChaCha12Rng {
    let mut hasher = Sha256::new();
    hasher.update(b"nudge2d.v1:");
    hasher.update(purpose.as_bytes());
    hasher.update(seed.to_le_bytes());
    hasher.update(stream.to_le_bytes());
    hasher.update(step.to_le_bytes());
    hasher.update(channel.to_le_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha12Rng::from_seed(key)
}
