//! Seeded, label-splittable random streams.
//!
//! Every stream is a ChaCha12 generator keyed by a 32-byte digest. A child
//! stream's key is `SHA-256(parent_key ‖ label)`, so children depend only on
//! the parent's key and their label, never on how much of the parent stream
//! (or of any sibling) has been consumed.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug)]
pub struct SeededRng {
    key: [u8; 32],
    inner: ChaCha12Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        let mut h = Sha256::new();
        h.update(b"fedmanip/seed");
        h.update(seed.to_le_bytes());
        Self::from_key(h.finalize().into())
    }

    fn from_key(key: [u8; 32]) -> Self {
        Self {
            key,
            inner: ChaCha12Rng::from_seed(key),
        }
    }

    /// Independent child stream identified by `label`.
    pub fn split(&self, label: &str) -> SeededRng {
        let mut h = Sha256::new();
        h.update(self.key);
        h.update((label.len() as u64).to_le_bytes());
        h.update(label.as_bytes());
        Self::from_key(h.finalize().into())
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(self)
    }

    pub fn uniform(&mut self) -> f64 {
        self.random::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.random_range(0..n)
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// Free-function form of [`SeededRng::split`].
pub fn rng_split(rng: &SeededRng, label: &str) -> SeededRng {
    rng.split(label)
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
