//! Seeded PRNG used for every stochastic choice in the project.
//!
//! The generator is PCG-XSH-RR 64/32 (`rand_pcg::Pcg32`): 64 bits of LCG
//! state plus a 64-bit stream selector. A generator is identified by
//! `(seed, stream)`; `Rng::new(seed)` uses stream 0.
//!
//! Sub-streams: `split(key)` returns the generator
//! `(seed, stream * 0x5851_F42D_4C95_7F2D + key + 1)` (wrapping arithmetic).
//! The child depends only on the parent's identity and `key`, never on how
//! many values the parent has already produced.

use rand::seq::SliceRandom;
use rand::RngExt;
use rand_distr::{Distribution, StandardNormal};
use rand_pcg::Pcg32;
use serde::{Deserialize, Serialize};

const STREAM_MUL: u64 = 0x5851_F42D_4C95_7F2D;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: Pcg32,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        Self {
            seed,
            stream,
            inner: Pcg32::new(seed, stream),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn split(&self, key: u64) -> Rng {
        let stream = self
            .stream
            .wrapping_mul(STREAM_MUL)
            .wrapping_add(key)
            .wrapping_add(1);
        Rng::with_stream(self.seed, stream)
    }

    pub fn next_u32(&mut self) -> u32 {
        self.inner.random()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random()
    }

    pub fn range_f64(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        self.inner.random_range(0..n)
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn split_ignores_parent_consumption() {
        let a = Rng::new(7);
        let mut b = Rng::new(7);
        for _ in 0..10 {
            b.next_u32();
        }
        let mut ca = a.split(3);
        let mut cb = b.split(3);
        assert_eq!(ca.next_u64(), cb.next_u64());
        let mut other = a.split(4);
        let mut ca = a.split(3);
        assert_ne!(ca.next_u64(), other.next_u64());
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut r = Rng::new(1);
        for _ in 0..1000 {
            let u = r.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn normal_moments_roughly_standard() {
        let mut r = Rng::new(9);
        let xs: Vec<f64> = (0..20_000).map(|_| r.normal()).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.03);
        assert!((var - 1.0).abs() < 0.05);
    }
}
