//! Counter-style random streams.
//!
//! A [`Stream`] is a 64-bit key. Child streams are derived by mixing the
//! parent key with an index, so the random numbers used by, say, proposal
//! `j` of iteration `t` depend only on `(seed, t, j)` and not on the order in
//! which work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Stream {
    key: u64,
}

impl Stream {
    pub fn new(seed: u64) -> Self {
        Self {
            key: mix64(seed.wrapping_add(GOLDEN_GAMMA)),
        }
    }

    /// Derives an independent sub-stream for `index`.
    pub fn child(self, index: u64) -> Self {
        let salt = mix64(
            index
                .wrapping_mul(GOLDEN_GAMMA)
                .wrapping_add(0x632B_E59B_D9B4_E019),
        );
        Self {
            key: mix64(self.key ^ salt),
        }
    }

    pub fn key(self) -> u64 {
        self.key
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.key)
    }
}
