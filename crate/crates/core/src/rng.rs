//! Seed derivation for reproducible parallel work.
//!
//! Every random stream is a ChaCha8 keystream keyed by the master seed; the
//! 64-bit stream id is derived from a path of tags (replicate index, purpose,
//! sample size, ...). Streams for different paths never overlap and do not
//! depend on the order in which workers request them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer, used to mix path tags into a stream id.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Plain seeded generator for single-purpose operations.
pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStream {
    master: u64,
    path: u64,
}

impl SeedStream {
    pub fn new(master: u64) -> Self {
        SeedStream { master, path: 0 }
    }

    pub fn child(&self, tag: u64) -> Self {
        SeedStream {
            master: self.master,
            path: splitmix64(self.path ^ splitmix64(tag.wrapping_add(1))),
        }
    }

    /// A derived plain seed, for APIs that take `seed: u64`.
    pub fn seed(&self) -> u64 {
        splitmix64(self.master ^ self.path.rotate_left(17))
    }

    pub fn rng(&self) -> Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(self.path);
        rng
    }
}
