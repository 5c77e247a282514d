//! Counter-based random streams. Every consumer derives its own stream from
//! the run seed and a path of integer tags (algorithm, iteration, state, ...),
//! so draws never depend on the order in which work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const SE: u64 = 1;
pub const SLPE: u64 = 2;
pub const NOISE: u64 = 3;
pub const MACRO: u64 = 4;
pub const CHECK: u64 = 5;

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Streams {
    key: u64,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Streams { key: splitmix64(seed) }
    }

    pub fn child(self, tag: u64) -> Self {
        Streams {
            key: splitmix64(self.key ^ splitmix64(tag.wrapping_add(0x632B_E59B_D9B4_E019))),
        }
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.key)
    }

    /// A derived 64-bit seed, for handing to code that takes a plain seed.
    pub fn seed(self) -> u64 {
        self.key
    }
}
