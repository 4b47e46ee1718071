//! Counter-style random streams.
//!
//! Every simulated path draws from its own ChaCha stream addressed by
//! `(seed, domain, path_id)`. A path's randomness is therefore fixed by its id
//! alone, and ensemble statistics do not depend on how paths are scheduled
//! across worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type PathRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Names an independent family of streams (one per ensemble).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamDomain(u64);

impl StreamDomain {
    pub fn new(tag: &str, index: u64) -> Self {
        // FNV-1a over the tag, then mixed with the index.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in tag.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
        StreamDomain(splitmix64(h ^ splitmix64(index)))
    }

    pub fn raw(self) -> u64 {
        self.0
    }
}

/// The random stream owned by one path.
pub fn path_stream(seed: u64, domain: StreamDomain, path_id: u64) -> PathRng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed) ^ domain.0);
    rng.set_stream(path_id);
    rng
}
