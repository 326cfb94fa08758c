//! Splittable, counter-based random streams.
//!
//! A [`SeedNode`] is a 64-bit key in a tree of seeds. Children are derived by
//! hashing `(parent key, label)` with SplitMix64 finalisers, so the stream for
//! "trial 3, step 17, particle 512" is a pure function of the master seed and that
//! path. Each node turns into a [`RandomStream`], a ChaCha8 keystream (itself a
//! counter-mode generator) keyed by four words expanded from the node key.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Well-known labels for named substreams.
pub mod label {
    pub const TRUTH: u64 = 0x7472_7574_6800_0001;
    pub const MATRIX: u64 = 0x6d61_7472_6978_0002;
    pub const PRIOR: u64 = 0x7072_696f_7200_0003;
    pub const FILTER: u64 = 0x6669_6c74_6572_0004;
    pub const RESAMPLE: u64 = 0x7265_7361_6d70_0005;
    pub const FIRST_STAGE: u64 = 0x6669_7273_7400_0006;
    pub const PERTURB: u64 = 0x7065_7274_7572_0007;
    pub const SLOTS: u64 = 0x736c_6f74_7300_0008;
    pub const STEPS: u64 = 0x7374_6570_7300_0009;
    pub const TRIALS: u64 = 0x7472_6961_6c00_000a;
}

/// A node of the seed tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedNode(u64);

impl SeedNode {
    pub fn new(master: u64) -> Self {
        SeedNode(splitmix64(master ^ 0x5EED_0000_0000_0000))
    }

    pub fn key(&self) -> u64 {
        self.0
    }

    pub fn child(&self, label: u64) -> SeedNode {
        SeedNode(splitmix64(
            self.0 ^ splitmix64(label.wrapping_mul(GOLDEN) ^ 0xA5A5_A5A5),
        ))
    }

    pub fn trial(&self, index: usize) -> SeedNode {
        self.child(label::TRIALS).child(index as u64)
    }

    pub fn step(&self, n: usize) -> SeedNode {
        self.child(label::STEPS).child(n as u64)
    }

    pub fn slot(&self, i: usize) -> SeedNode {
        self.child(label::SLOTS).child(i as u64)
    }

    pub fn stream(&self) -> RandomStream {
        let mut seed = [0u8; 32];
        let mut k = self.0;
        for chunk in seed.chunks_exact_mut(8) {
            k = splitmix64(k);
            chunk.copy_from_slice(&k.to_le_bytes());
        }
        RandomStream(ChaCha8Rng::from_seed(seed))
    }
}

/// An owned random stream. Never shared between tasks.
#[derive(Debug, Clone)]
pub struct RandomStream(ChaCha8Rng);

impl RandomStream {
    pub fn from_seed(seed: u64) -> Self {
        SeedNode::new(seed).stream()
    }
}

impl RngCore for RandomStream {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    #[inline]
    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}
