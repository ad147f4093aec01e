//! Seeded pseudo-random numbers.
//!
//! All stochastic initialisation goes through [`Rng`], which wraps the
//! ChaCha8 stream cipher generator (`rand_chacha::ChaCha8Rng`). Given the
//! same seed it yields the same stream on every platform.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::Tensor;

#[derive(Clone, Debug)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn seed(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream derived from `seed` and a stream label.
    pub fn derived(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner }
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.random::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        Normal::new(mean, std)
            .expect("finite non-negative std")
            .sample(&mut self.inner)
    }

    pub fn normal_tensor(&mut self, shape: impl Into<Vec<usize>>, std: f32) -> Tensor {
        Tensor::from_fn(shape, |_| (self.standard_normal() * std as f64) as f32)
    }

    pub fn uniform_tensor(&mut self, shape: impl Into<Vec<usize>>, lo: f32, hi: f32) -> Tensor {
        Tensor::from_fn(shape, |_| self.uniform(lo as f64, hi as f64) as f32)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.inner.random_range(0..=i);
            items.swap(i, j);
        }
    }
}
