//! Seeded random number generation.
//!
//! Every generator is a ChaCha8 stream: the 64-bit seed selects the key and a
//! purpose label ("init", "shuffle", "member-3", ...) selects the stream, so
//! independent consumers of the same seed never share draws.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(mut hash: u64, bytes: &[u8]) -> u64 {
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    /// Independent substream of `seed` identified by `purpose`.
    pub fn stream(seed: u64, purpose: &str) -> Self {
        Self::with_stream(seed, fnv1a(FNV_OFFSET, purpose.as_bytes()))
    }

    /// Child stream derived from this generator's (seed, stream) and `purpose`.
    /// Does not consume draws from `self`.
    pub fn fork(&self, purpose: &str) -> Self {
        let base = fnv1a(FNV_OFFSET, &self.stream.to_le_bytes());
        Self::with_stream(self.seed, fnv1a(base, purpose.as_bytes()))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// ±1 with equal probability.
    pub fn sign(&mut self) -> f64 {
        if self.inner.next_u32() & 1 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        self.shuffle(&mut idx);
        idx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_seeds_give_equal_sequences() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..10_000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn purposes_are_independent_streams() {
        let mut a = Rng::stream(7, "init");
        let mut b = Rng::stream(7, "shuffle");
        let same = (0..64).filter(|_| a.next_u64() == b.next_u64()).count();
        assert_eq!(same, 0);
    }

    #[test]
    fn fork_is_deterministic_and_leaves_parent_untouched() {
        let parent = Rng::stream(3, "train");
        let mut c1 = parent.fork("member-1");
        let mut c2 = parent.fork("member-1");
        let mut c3 = parent.fork("member-2");
        let x = c1.next_u64();
        assert_eq!(x, c2.next_u64());
        assert_ne!(x, c3.next_u64());
        let mut p1 = parent.clone();
        let mut p2 = Rng::stream(3, "train");
        assert_eq!(p1.next_u64(), p2.next_u64());
    }

    #[test]
    fn signs_are_balanced() {
        let mut r = Rng::new(1);
        let pos = (0..20_000).filter(|_| r.sign() > 0.0).count();
        assert!((pos as f64 / 20_000.0 - 0.5).abs() < 0.02);
    }
}
