//! Named, seed-derived random streams.
//!
//! Every consumer of randomness asks for a stream by name (for example
//! `"client/3/shuffle"`). The stream is a ChaCha8 generator keyed by
//! SHA-256 of the run seed and the name, so results never depend on the
//! order in which streams are created or on whether clients run in parallel.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Stream = ChaCha8Rng;

fn digest(seed: u64, name: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    h.finalize().into()
}

pub fn stream(seed: u64, name: &str) -> Stream {
    ChaCha8Rng::from_seed(digest(seed, name))
}

/// 64-bit identifier for a named stream, used where a value object has to
/// carry its own noise source (see `ChannelRealization::noise_seed`).
pub fn stream_id(seed: u64, name: &str) -> u64 {
    let d = digest(seed, name);
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

pub fn from_id(id: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(id)
}
