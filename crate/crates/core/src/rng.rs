//! Named random streams derived from a single run seed.
//!
//! Each stage (few-shot sampling, shuffling, generation)
//! draws from its own stream so that changing one stage leaves the others
//! untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub const SAMPLING: &str = "sampling";
pub const SHUFFLE: &str = "shuffle";
pub const GENERATE: &str = "generate";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStreams {
    seed: u64,
}

impl SeedStreams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derived 64-bit seed for `name`: FNV-1a over the name, mixed with the
    /// run seed through SplitMix64.
    pub fn derive(&self, name: &str) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in name.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        splitmix64(self.seed ^ splitmix64(h))
    }

    pub fn stream(&self, name: &str) -> StreamRng {
        ChaCha8Rng::seed_from_u64(self.derive(name))
    }

    /// Stream for the `index`-th instance of a named stage.
    pub fn indexed(&self, name: &str, index: u64) -> StreamRng {
        ChaCha8Rng::seed_from_u64(splitmix64(self.derive(name) ^ splitmix64(index.wrapping_add(1))))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
