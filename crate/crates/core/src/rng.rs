//! Deterministic, counter-based RNG streams.
//!
//! A run owns one root seed. Every consumer (epoch, stage, pair, worker)
//! derives its own stream from the root and a path of labels, so results do
//! not depend on scheduling order or the worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hierarchical seed: `SeedPath::new(7).child(3).child(pair)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedPath(u64);

impl SeedPath {
    pub fn new(root: u64) -> Self {
        SeedPath(splitmix64(root))
    }

    pub fn child(self, label: u64) -> Self {
        SeedPath(splitmix64(self.0 ^ splitmix64(label.wrapping_add(0x632B_E59B_D9B4_E019))))
    }

    /// Child keyed by a short string, for named stages.
    pub fn named(self, label: &str) -> Self {
        let h = label
            .bytes()
            .fold(0xCBF2_9CE4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01B3));
        self.child(h)
    }

    pub fn rng(self) -> Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    pub fn value(self) -> u64 {
        self.0
    }
}

pub fn rng_from_seed(seed: u64) -> Rng {
    SeedPath::new(seed).rng()
}
