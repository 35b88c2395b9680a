//! Seed derivation. Every stochastic choice in the crate starts from one
//! 64-bit master seed; child seeds are derived by hashing a path of labels,
//! and each child drives its own ChaCha stream.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// A node in the seed tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedChain(u64);

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl SeedChain {
    pub fn new(seed: u64) -> Self {
        SeedChain(seed)
    }

    pub fn seed(&self) -> u64 {
        self.0
    }

    /// Child node for `label`. Distinct labels give independent streams.
    pub fn child(&self, label: u64) -> SeedChain {
        SeedChain(splitmix64(self.0 ^ splitmix64(label.wrapping_add(0x632B_E59B_D9B4_E019))))
    }

    /// Child keyed by a string tag (e.g. a method name).
    pub fn named(&self, tag: &str) -> SeedChain {
        let h = tag
            .bytes()
            .fold(0xCBF2_9CE4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01B3));
        self.child(h)
    }

    pub fn rng(&self) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(self.0)
    }
}
