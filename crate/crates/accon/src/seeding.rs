//! Named RNG streams: one root seed fans out into independent,
//! order-insensitive substreams ("labels", "noise", "aug-view1", ...).

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// FNV-1a over the root seed bytes followed by the stream name.
pub fn sub_seed(root: u64, stream: &str) -> u64 {
    const OFFSET: u64 = 0xcbf29ce484222325;
    const PRIME: u64 = 0x100000001b3;
    let mut h = OFFSET;
    for b in root.to_le_bytes().iter().chain(stream.as_bytes()) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(PRIME);
    }
    h
}

/// Deterministic generator for one named stream.
pub fn stream_rng(root: u64, stream: &str) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(sub_seed(root, stream))
}
