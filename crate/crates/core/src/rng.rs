//! Seeded random streams.
//!
//! Every consumer derives its generator from a base seed plus a stream id, so
//! per-sample work can run in any order (or in parallel) and still reproduce.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes a purpose tag into a seed so that unrelated consumers of the same
/// user seed do not share streams.
pub fn tagged(seed: u64, tag: &str) -> u64 {
    // FNV-1a over the tag, folded into the seed
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    seed ^ h.rotate_left(17)
}
