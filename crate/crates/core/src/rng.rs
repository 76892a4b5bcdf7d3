//! Seeded random streams.
//!
//! A stream is a ChaCha8 generator keyed by the master seed with the run id
//! selecting the ChaCha stream word, so `(master_seed, run_id)` pairs map to
//! disjoint, reproducible keystreams.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone)]
pub struct RngStream {
    inner: ChaCha8Rng,
}

/// Derives the stream for one run.
pub fn rng_stream(master_seed: u64, run_id: u64) -> RngStream {
    let mut inner = ChaCha8Rng::seed_from_u64(master_seed);
    inner.set_stream(run_id);
    RngStream { inner }
}

impl RngStream {
    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// A Bernoulli(p) coin; `p >= 1` is always heads and `p <= 0` always tails.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        if p >= 1.0 {
            return true;
        }
        if p <= 0.0 {
            return false;
        }
        self.uniform() < p
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// `k` distinct indices from `0..n`, drawn by a partial Fisher–Yates
    /// shuffle. The returned order is the draw order.
    pub fn sample_without_replacement(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot draw {k} distinct indices from {n}");
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.inner.random_range(0..(n - i));
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }

    /// Full seeded permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        self.sample_without_replacement(n, n)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
}
