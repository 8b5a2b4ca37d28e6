//! Counter-based random streams.
//!
//! Every random draw in the crate comes from a [`StreamKey`], a 64-bit
//! digest of `(seed, purpose, index, ...)`. Keys are derived, never
//! advanced, so the numbers a particle sees depend only on its key and not on
//! the order or thread in which work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type StreamRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamKey(u64);

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        StreamKey(splitmix64(seed))
    }

    /// Child key for an integer index.
    pub fn at(self, index: u64) -> Self {
        StreamKey(splitmix64(self.0 ^ splitmix64(index.wrapping_add(0x632B_E59B_D9B4_E019))))
    }

    /// Child key for a purpose tag.
    pub fn named(self, tag: &str) -> Self {
        // FNV-1a
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in tag.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
        StreamKey(splitmix64(self.0 ^ h.rotate_left(17)))
    }

    pub fn raw(self) -> u64 {
        self.0
    }

    pub fn rng(self) -> StreamRng {
        let mut seed = [0u8; 32];
        let mut s = self.0;
        for chunk in seed.chunks_exact_mut(8) {
            s = splitmix64(s);
            chunk.copy_from_slice(&s.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}
