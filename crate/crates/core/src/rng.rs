//! Seeded randomness. Same seed and call sequence, same outputs.

use rand::seq::index;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derives an independent generator for a named sub-stream.
    pub fn fork(&mut self, tag: u64) -> Rng {
        let s = self.inner.gen::<u64>() ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        Rng::new(s)
    }

    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        p > 0.0 && self.uniform() < p
    }

    /// `amount` distinct indices from `0..len`, uniformly without replacement.
    pub fn sample_indices(&mut self, len: usize, amount: usize) -> Vec<usize> {
        index::sample(&mut self.inner, len, amount.min(len)).into_vec()
    }

    pub fn shuffle<X>(&mut self, items: &mut [X]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.inner);
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }

    pub fn normal_tensor<T: Scalar>(&mut self, shape: &[usize], std: f64) -> Tensor<T> {
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::lit(self.normal() * std)).collect();
        Tensor::from_parts(shape.to_vec(), data)
    }

    pub fn uniform_tensor<T: Scalar>(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor<T> {
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::lit(self.uniform_in(lo, hi))).collect();
        Tensor::from_parts(shape.to_vec(), data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        let ta: Tensor<f64> = a.normal_tensor(&[4, 4], 1.0);
        let tb: Tensor<f64> = b.normal_tensor(&[4, 4], 1.0);
        assert_eq!(ta.checksum(), tb.checksum());
        assert_eq!(a.sample_indices(100, 7), b.sample_indices(100, 7));
    }

    #[test]
    fn sample_indices_are_distinct() {
        let mut r = Rng::new(1);
        let mut idx = r.sample_indices(20, 20);
        idx.sort_unstable();
        assert_eq!(idx, (0..20).collect::<Vec<_>>());
        assert_eq!(r.sample_indices(3, 10).len(), 3);
    }
}
