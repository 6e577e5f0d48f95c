//! Named random streams derived from a single 64-bit seed.
//!
//! Every consumer of randomness asks for its own stream by name, so adding a
//! new consumer never shifts the draws another one sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

/// Seed for the stream `name` under the master `seed`.
pub fn derive_seed(seed: u64, name: &str) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(name.as_bytes());
    hasher.finalize().into()
}

/// A 64-bit seed for the stream `name`, for consumers that take a plain
/// seed.
pub fn stream_seed(seed: u64, name: &str) -> u64 {
    let bytes = derive_seed(seed, name);
    u64::from_le_bytes(bytes[..8].try_into().expect("eight bytes"))
}

pub fn stream(seed: u64, name: &str) -> StreamRng {
    ChaCha8Rng::from_seed(derive_seed(seed, name))
}
