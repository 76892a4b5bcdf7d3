//! Stochastic estimators of `∇K` for `K(x, z; y) = f(x, y) + (r/2)‖x − z‖²`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;
use crate::problems::MinimaxProblem;

#[derive(Debug, Error, PartialEq)]
pub enum EstimatorError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("batch size {b} outside 1..={n}")]
    BatchSize { b: usize, n: usize },
    #[error("component index {index} out of range for n = {n}")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("the recursive branch needs the previous point")]
    MissingPrevious,
    #[error("the recursive branch needs an initialized estimator")]
    Uninitialized,
}

/// Whether the `x`- and `y`-blocks share one minibatch per iteration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchCoupling {
    #[default]
    Coupled,
    Independent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

impl Point {
    pub fn new(x: Vec<f64>, y: Vec<f64>, z: Vec<f64>) -> Self {
        Point { x, y, z }
    }
}

/// Gradient access to `K` with oracle accounting: every component gradient
/// of one block costs one unit.
#[derive(Clone, Copy)]
pub struct RegularizedOracle<'a> {
    problem: &'a dyn MinimaxProblem,
    r: f64,
    calls: u64,
}

impl<'a> RegularizedOracle<'a> {
    pub fn new(problem: &'a dyn MinimaxProblem, r: f64) -> Self {
        RegularizedOracle { problem, r, calls: 0 }
    }

    pub fn problem(&self) -> &'a dyn MinimaxProblem {
        self.problem
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn n(&self) -> usize {
        self.problem.n()
    }

    pub fn calls(&self) -> u64 {
        self.calls
    }

    fn check_batch(&self, batch: &[usize]) -> Result<(), EstimatorError> {
        if batch.is_empty() {
            return Err(EstimatorError::EmptyBatch);
        }
        let n = self.n();
        match batch.iter().find(|&&i| i >= n) {
            Some(&index) => Err(EstimatorError::IndexOutOfRange { index, n }),
            None => Ok(()),
        }
    }

    fn add_prox(&self, x: &[f64], z: &[f64], out: &mut [f64]) {
        if self.r != 0.0 {
            for ((o, a), b) in out.iter_mut().zip(x).zip(z) {
                *o += self.r * (a - b);
            }
        }
    }

    /// Batch mean of `∇_x f_i(x, y)` plus `r(x − z)`.
    pub fn reg_grad_x(&mut self, batch: &[usize], x: &[f64], z: &[f64], y: &[f64]) -> Result<Vec<f64>, EstimatorError> {
        self.check_batch(batch)?;
        let mut out = vec![0.0; x.len()];
        self.add_batch_x(batch, x, z, y, 1.0, &mut out);
        Ok(out)
    }

    /// Batch mean of `∇_y f_i(x, y)`.
    pub fn reg_grad_y(&mut self, batch: &[usize], x: &[f64], y: &[f64]) -> Result<Vec<f64>, EstimatorError> {
        self.check_batch(batch)?;
        let mut out = vec![0.0; y.len()];
        self.add_batch_y(batch, x, y, 1.0, &mut out);
        Ok(out)
    }

    /// `out += sign · (batch mean of ∇_x K_i)`
    fn add_batch_x(&mut self, batch: &[usize], x: &[f64], z: &[f64], y: &[f64], sign: f64, out: &mut [f64]) {
        let w = sign / batch.len() as f64;
        for &i in batch {
            self.problem.accumulate_grad_x(i, x, y, w, out);
        }
        if self.r != 0.0 {
            for ((o, a), b) in out.iter_mut().zip(x).zip(z) {
                *o += sign * self.r * (a - b);
            }
        }
        self.calls += batch.len() as u64;
    }

    fn add_batch_y(&mut self, batch: &[usize], x: &[f64], y: &[f64], sign: f64, out: &mut [f64]) {
        let w = sign / batch.len() as f64;
        for &i in batch {
            self.problem.accumulate_grad_y(i, x, y, w, out);
        }
        self.calls += batch.len() as u64;
    }

    /// `∇_x K(x, z; y)`, costing `n` units.
    pub fn full_grad_x(&mut self, x: &[f64], z: &[f64], y: &[f64]) -> Vec<f64> {
        self.calls += self.n() as u64;
        self.exact_grad_x(x, z, y)
    }

    /// `∇_y K(x, z; y)`, costing `n` units.
    pub fn full_grad_y(&mut self, x: &[f64], y: &[f64]) -> Vec<f64> {
        self.calls += self.n() as u64;
        self.exact_grad_y(x, y)
    }

    /// `∇_x K` without accounting, for diagnostics.
    pub fn exact_grad_x(&self, x: &[f64], z: &[f64], y: &[f64]) -> Vec<f64> {
        let mut g = self.problem.grad_x(x, y);
        self.add_prox(x, z, &mut g);
        g
    }

    pub fn exact_grad_y(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        self.problem.grad_y(x, y)
    }

    /// `∇_x K_i` into `out` (overwritten), one unit.
    fn component_x(&mut self, i: usize, x: &[f64], z: &[f64], y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        self.problem.accumulate_grad_x(i, x, y, 1.0, out);
        self.add_prox(x, z, out);
        self.calls += 1;
    }

    fn component_y(&mut self, i: usize, x: &[f64], y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        self.problem.accumulate_grad_y(i, x, y, 1.0, out);
        self.calls += 1;
    }

    /// `∇_x K_i` without accounting.
    pub fn exact_component_x(&self, i: usize, x: &[f64], z: &[f64], y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.problem.accumulate_grad_x(i, x, y, 1.0, &mut out);
        self.add_prox(x, z, &mut out);
        out
    }

    pub fn exact_component_y(&self, i: usize, x: &[f64], y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; y.len()];
        self.problem.accumulate_grad_y(i, x, y, 1.0, &mut out);
        out
    }
}

/// The probabilistic variance-reduced estimator: a full gradient with
/// probability `p`, otherwise a recursive difference on a small batch.
#[derive(Debug, Clone, Default)]
pub struct PvrEstimator {
    pub v: Vec<f64>,
    pub w: Vec<f64>,
    initialized: bool,
}

impl PvrEstimator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    /// One estimator update at `cur`. `coin = true` takes the full-gradient
    /// branch; otherwise `v ← v + ∇K̃(cur) − ∇K̃(prev)` on `batch_x` (and the
    /// analogue for `w` on `batch_y`).
    pub fn update(
        &mut self,
        oracle: &mut RegularizedOracle<'_>,
        coin: bool,
        batch_x: &[usize],
        batch_y: &[usize],
        cur: &Point,
        prev: Option<&Point>,
    ) -> Result<(), EstimatorError> {
        if coin {
            self.v = oracle.full_grad_x(&cur.x, &cur.z, &cur.y);
            self.w = oracle.full_grad_y(&cur.x, &cur.y);
            self.initialized = true;
            return Ok(());
        }
        if !self.initialized {
            return Err(EstimatorError::Uninitialized);
        }
        let prev = prev.ok_or(EstimatorError::MissingPrevious)?;
        oracle.check_batch(batch_x)?;
        oracle.check_batch(batch_y)?;
        oracle.add_batch_x(batch_x, &cur.x, &cur.z, &cur.y, 1.0, &mut self.v);
        oracle.add_batch_x(batch_x, &prev.x, &prev.z, &prev.y, -1.0, &mut self.v);
        oracle.add_batch_y(batch_y, &cur.x, &cur.y, 1.0, &mut self.w);
        oracle.add_batch_y(batch_y, &prev.x, &prev.y, -1.0, &mut self.w);
        Ok(())
    }
}

/// How the ZeroSARAH trackers start.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroSarahInit {
    /// One full pass fills the trackers at the initial point and the first
    /// step uses `λ₀ = 1`, so `v_0 = ∇_x K_0` exactly.
    #[default]
    WarmStart,
    /// Zero trackers, zero estimators and constant `λ` from the first step.
    Zero,
}

/// ZeroSARAH estimator with per-component trackers `d_i` and `h_i`.
#[derive(Debug, Clone)]
pub struct ZeroSarahEstimator {
    pub v: Vec<f64>,
    pub w: Vec<f64>,
    n: usize,
    dim_x: usize,
    dim_y: usize,
    lambda: f64,
    init: ZeroSarahInit,
    /// Row-major `n × dim_x` and `n × dim_y`.
    d: Vec<f64>,
    h: Vec<f64>,
    sum_d: Vec<f64>,
    sum_h: Vec<f64>,
    steps: u64,
    resum_period: u64,
}

impl ZeroSarahEstimator {
    /// Allocates the trackers; in warm-start mode this spends `2n` units at
    /// `start`.
    pub fn new(
        oracle: &mut RegularizedOracle<'_>,
        lambda: f64,
        init: ZeroSarahInit,
        start: &Point,
    ) -> ZeroSarahEstimator {
        let n = oracle.n();
        let dim_x = start.x.len();
        let dim_y = start.y.len();
        let mut est = ZeroSarahEstimator {
            v: vec![0.0; dim_x],
            w: vec![0.0; dim_y],
            n,
            dim_x,
            dim_y,
            lambda,
            init,
            d: vec![0.0; n * dim_x],
            h: vec![0.0; n * dim_y],
            sum_d: vec![0.0; dim_x],
            sum_h: vec![0.0; dim_y],
            steps: 0,
            resum_period: 1000,
        };
        if init == ZeroSarahInit::WarmStart {
            for i in 0..n {
                oracle.component_x(i, &start.x, &start.z, &start.y, &mut est.d[i * dim_x..(i + 1) * dim_x]);
                oracle.component_y(i, &start.x, &start.y, &mut est.h[i * dim_y..(i + 1) * dim_y]);
            }
            est.resum();
        }
        est
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn set_resum_period(&mut self, period: u64) {
        self.resum_period = period.max(1);
    }

    pub fn tracker_x(&self, i: usize) -> &[f64] {
        &self.d[i * self.dim_x..(i + 1) * self.dim_x]
    }

    pub fn tracker_y(&self, i: usize) -> &[f64] {
        &self.h[i * self.dim_y..(i + 1) * self.dim_y]
    }

    /// Incrementally maintained `Σ_i d_i` and `Σ_i h_i`.
    pub fn tracker_sums(&self) -> (&[f64], &[f64]) {
        (&self.sum_d, &self.sum_h)
    }

    /// Recomputes the tracker sums from scratch.
    pub fn recomputed_sums(&self) -> (Vec<f64>, Vec<f64>) {
        let mut sd = vec![0.0; self.dim_x];
        let mut sh = vec![0.0; self.dim_y];
        for i in 0..self.n {
            linalg::axpy(1.0, self.tracker_x(i), &mut sd);
            linalg::axpy(1.0, self.tracker_y(i), &mut sh);
        }
        (sd, sh)
    }

    fn resum(&mut self) {
        let (sd, sh) = self.recomputed_sums();
        self.sum_d = sd;
        self.sum_h = sh;
    }

    /// Mean-square tracker errors `(1/n) Σ ‖∇K_i − d_i‖²` and the `h`
    /// analogue at `p`, without accounting.
    pub fn tracker_errors(&self, oracle: &RegularizedOracle<'_>, p: &Point) -> (f64, f64) {
        let mut ex = 0.0;
        let mut ey = 0.0;
        for i in 0..self.n {
            ex += linalg::dist_sq(&oracle.exact_component_x(i, &p.x, &p.z, &p.y), self.tracker_x(i));
            ey += linalg::dist_sq(&oracle.exact_component_y(i, &p.x, &p.y), self.tracker_y(i));
        }
        (ex / self.n as f64, ey / self.n as f64)
    }

    /// One update at `cur` with the previous point `prev` (`None` on the
    /// first step, meaning `prev = cur`), then the tracker refresh on the
    /// batches. Costs `2|batch_x| + 2|batch_y|` units.
    pub fn update(
        &mut self,
        oracle: &mut RegularizedOracle<'_>,
        batch_x: &[usize],
        batch_y: &[usize],
        cur: &Point,
        prev: Option<&Point>,
    ) -> Result<(), EstimatorError> {
        oracle.check_batch(batch_x)?;
        oracle.check_batch(batch_y)?;
        let prev = prev.unwrap_or(cur);
        let lambda = if self.steps == 0 && self.init == ZeroSarahInit::WarmStart { 1.0 } else { self.lambda };
        let inv_n = 1.0 / self.n as f64;

        let bx = batch_x.len() as f64;
        let mut at_cur = vec![0.0; self.dim_x];
        let mut at_prev = vec![0.0; self.dim_x];
        let mut diff = vec![0.0; self.dim_x];
        let mut corr = vec![0.0; self.dim_x];
        let mut fresh = Vec::with_capacity(batch_x.len() * self.dim_x);
        for &i in batch_x {
            oracle.component_x(i, &cur.x, &cur.z, &cur.y, &mut at_cur);
            oracle.component_x(i, &prev.x, &prev.z, &prev.y, &mut at_prev);
            let di = &self.d[i * self.dim_x..(i + 1) * self.dim_x];
            for k in 0..self.dim_x {
                diff[k] += at_cur[k] - at_prev[k];
                corr[k] += at_prev[k] - di[k];
            }
            fresh.extend_from_slice(&at_cur);
        }
        for k in 0..self.dim_x {
            self.v[k] = diff[k] / bx + (1.0 - lambda) * self.v[k] + lambda * (corr[k] / bx + inv_n * self.sum_d[k]);
        }
        for (slot, &i) in batch_x.iter().enumerate() {
            let g = &fresh[slot * self.dim_x..(slot + 1) * self.dim_x];
            let di = &mut self.d[i * self.dim_x..(i + 1) * self.dim_x];
            for k in 0..self.dim_x {
                self.sum_d[k] += g[k] - di[k];
            }
            di.copy_from_slice(g);
        }

        let by = batch_y.len() as f64;
        let mut at_cur = vec![0.0; self.dim_y];
        let mut at_prev = vec![0.0; self.dim_y];
        let mut diff = vec![0.0; self.dim_y];
        let mut corr = vec![0.0; self.dim_y];
        let mut fresh = Vec::with_capacity(batch_y.len() * self.dim_y);
        for &i in batch_y {
            oracle.component_y(i, &cur.x, &cur.y, &mut at_cur);
            oracle.component_y(i, &prev.x, &prev.y, &mut at_prev);
            let hi = &self.h[i * self.dim_y..(i + 1) * self.dim_y];
            for k in 0..self.dim_y {
                diff[k] += at_cur[k] - at_prev[k];
                corr[k] += at_prev[k] - hi[k];
            }
            fresh.extend_from_slice(&at_cur);
        }
        for k in 0..self.dim_y {
            self.w[k] = diff[k] / by + (1.0 - lambda) * self.w[k] + lambda * (corr[k] / by + inv_n * self.sum_h[k]);
        }
        for (slot, &i) in batch_y.iter().enumerate() {
            let g = &fresh[slot * self.dim_y..(slot + 1) * self.dim_y];
            let hi = &mut self.h[i * self.dim_y..(i + 1) * self.dim_y];
            for k in 0..self.dim_y {
                self.sum_h[k] += g[k] - hi[k];
            }
            hi.copy_from_slice(g);
        }

        self.steps += 1;
        if self.steps % self.resum_period == 0 {
            self.resum();
        }
        Ok(())
    }
}

/// SVRG estimator around a periodically refreshed snapshot.
#[derive(Debug, Clone)]
pub struct SvrgEstimator {
    snapshot: Point,
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
}

impl SvrgEstimator {
    /// Takes a snapshot at `p`, costing `2n` units.
    pub fn new(oracle: &mut RegularizedOracle<'_>, p: &Point) -> Self {
        let mut est = SvrgEstimator { snapshot: p.clone(), mu_x: Vec::new(), mu_y: Vec::new() };
        est.refresh(oracle, p);
        est
    }

    pub fn refresh(&mut self, oracle: &mut RegularizedOracle<'_>, p: &Point) {
        self.mu_x = oracle.full_grad_x(&p.x, &p.z, &p.y);
        self.mu_y = oracle.full_grad_y(&p.x, &p.y);
        self.snapshot = p.clone();
    }

    pub fn snapshot(&self) -> &Point {
        &self.snapshot
    }

    /// `∇_x K̃_B(p) − ∇_x K̃_B(snapshot) + ∇_x K(snapshot)`, `2|batch|` units.
    pub fn estimate_x(&self, oracle: &mut RegularizedOracle<'_>, batch: &[usize], p: &Point) -> Result<Vec<f64>, EstimatorError> {
        oracle.check_batch(batch)?;
        let s = &self.snapshot;
        let mut v = self.mu_x.clone();
        oracle.add_batch_x(batch, &p.x, &p.z, &p.y, 1.0, &mut v);
        oracle.add_batch_x(batch, &s.x, &s.z, &s.y, -1.0, &mut v);
        Ok(v)
    }

    pub fn estimate_y(&self, oracle: &mut RegularizedOracle<'_>, batch: &[usize], p: &Point) -> Result<Vec<f64>, EstimatorError> {
        oracle.check_batch(batch)?;
        let s = &self.snapshot;
        let mut w = self.mu_y.clone();
        oracle.add_batch_y(batch, &p.x, &p.y, 1.0, &mut w);
        oracle.add_batch_y(batch, &s.x, &s.y, -1.0, &mut w);
        Ok(w)
    }
}

/// Plain minibatch gradients at `p`.
pub fn minibatch_update(
    oracle: &mut RegularizedOracle<'_>,
    batch_x: &[usize],
    batch_y: &[usize],
    p: &Point,
) -> Result<(Vec<f64>, Vec<f64>), EstimatorError> {
    let v = oracle.reg_grad_x(batch_x, &p.x, &p.z, &p.y)?;
    let w = oracle.reg_grad_y(batch_y, &p.x, &p.y)?;
    Ok((v, w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{ToyBilinearProblem, ToySpec};
    use crate::rng::rng_stream;

    fn toy() -> ToyBilinearProblem {
        ToyBilinearProblem::random(&ToySpec { n: 20, dim_x: 4, dim_y: 3, ..Default::default() }).unwrap()
    }

    fn point(p: &ToyBilinearProblem, shift: f64) -> Point {
        let x: Vec<f64> = (0..p.dim_x()).map(|j| 0.1 * j as f64 - shift).collect();
        let mut y = vec![0.2 + shift; p.dim_y()];
        y[0] = 0.0;
        crate::sets::project_simplex(&mut y);
        let z: Vec<f64> = x.iter().map(|v| v + 0.3).collect();
        Point { x, y, z }
    }

    fn all(n: usize) -> Vec<usize> {
        (0..n).collect()
    }

    #[test]
    fn full_batch_equals_full_gradient() {
        let p = toy();
        let mut o = RegularizedOracle::new(&p, 2.0);
        let q = point(&p, 0.1);
        let b = all(p.n());
        let gx = o.reg_grad_x(&b, &q.x, &q.z, &q.y).unwrap();
        let gy = o.reg_grad_y(&b, &q.x, &q.y).unwrap();
        assert!(linalg::max_abs_diff(&gx, &o.exact_grad_x(&q.x, &q.z, &q.y)) <= 1e-12);
        assert!(linalg::max_abs_diff(&gy, &o.exact_grad_y(&q.x, &q.y)) <= 1e-12);
        assert_eq!(o.calls(), 2 * p.n() as u64);
    }

    #[test]
    fn regularizer_vanishes_at_center_and_scales_with_r() {
        let p = toy();
        let mut o = RegularizedOracle::new(&p, 2.0);
        let q = point(&p, 0.0);
        let g = o.reg_grad_x(&[3, 5], &q.x, &q.x, &q.y).unwrap();
        let mut plain = vec![0.0; p.dim_x()];
        p.accumulate_grad_x(3, &q.x, &q.y, 0.5, &mut plain);
        p.accumulate_grad_x(5, &q.x, &q.y, 0.5, &mut plain);
        assert!(linalg::max_abs_diff(&g, &plain) <= 1e-15);

        // Zero matrices leave only the regularizer: r = 2, x − z = (1, 0).
        let set_x = crate::sets::FeasibleSet::uniform_box(2, -5.0, 5.0).unwrap();
        let zero = ToyBilinearProblem::new(vec![vec![0.0; 4]], 2, 2, 1e-300, set_x).unwrap();
        let mut o = RegularizedOracle::new(&zero, 2.0);
        let g = o.reg_grad_x(&[0], &[1.0, 0.0], &[0.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!(linalg::max_abs_diff(&g, &[2.0, 0.0]) <= 1e-12);
    }

    #[test]
    fn empty_and_invalid_batches_are_rejected() {
        let p = toy();
        let mut o = RegularizedOracle::new(&p, 2.0);
        let q = point(&p, 0.0);
        assert_eq!(o.reg_grad_x(&[], &q.x, &q.z, &q.y), Err(EstimatorError::EmptyBatch));
        assert_eq!(
            o.reg_grad_y(&[20], &q.x, &q.y),
            Err(EstimatorError::IndexOutOfRange { index: 20, n: 20 })
        );
        let mut pvr = PvrEstimator::new();
        assert_eq!(pvr.update(&mut o, false, &[0], &[0], &q, None), Err(EstimatorError::Uninitialized));
        pvr.update(&mut o, true, &[], &[], &q, None).unwrap();
        assert_eq!(pvr.update(&mut o, false, &[0], &[0], &q, None), Err(EstimatorError::MissingPrevious));
    }

    #[test]
    fn pvr_heads_is_exact_and_stationary_tails_is_identity() {
        let p = toy();
        let mut o = RegularizedOracle::new(&p, 2.0);
        let a = point(&p, 0.0);
        let mut pvr = PvrEstimator::new();
        pvr.update(&mut o, true, &[], &[], &a, None).unwrap();
        assert_eq!(pvr.v, o.exact_grad_x(&a.x, &a.z, &a.y));
        let before = (pvr.v.clone(), pvr.w.clone());
        pvr.update(&mut o, false, &[1, 2], &[1, 2], &a, Some(&a)).unwrap();
        assert!(linalg::max_abs_diff(&pvr.v, &before.0) <= 1e-15);
        assert!(linalg::max_abs_diff(&pvr.w, &before.1) <= 1e-15);
        assert_eq!(o.calls(), 2 * 20 + 4 * 2);
    }

    #[test]
    fn pvr_conditional_mean_matches_monte_carlo() {
        let p = toy();
        let a = point(&p, 0.0);
        let b = point(&p, 0.05);
        let mut base_oracle = RegularizedOracle::new(&p, 2.0);
        let mut base = PvrEstimator::new();
        base.update(&mut base_oracle, true, &[], &[], &a, None).unwrap();
        // Perturb v_{t−1} so it is not the exact gradient.
        base.v.iter_mut().for_each(|v| *v += 0.3);
        let prob = 0.3;
        let gx_a = base_oracle.exact_grad_x(&a.x, &a.z, &a.y);
        let gx_b = base_oracle.exact_grad_x(&b.x, &b.z, &b.y);
        let expect: Vec<f64> = (0..p.dim_x())
            .map(|k| prob * gx_b[k] + (1.0 - prob) * (base.v[k] + gx_b[k] - gx_a[k]))
            .collect();
        let mut rng = rng_stream(21, 0);
        let draws = 100_000;
        let mut sum = vec![0.0; p.dim_x()];
        let mut sum_sq = vec![0.0; p.dim_x()];
        for _ in 0..draws {
            let mut est = base.clone();
            let mut o = RegularizedOracle::new(&p, 2.0);
            let coin = rng.bernoulli(prob);
            let batch = [rng.index(p.n())];
            est.update(&mut o, coin, &batch, &batch, &b, Some(&a)).unwrap();
            for k in 0..p.dim_x() {
                sum[k] += est.v[k];
                sum_sq[k] += est.v[k] * est.v[k];
            }
        }
        for k in 0..p.dim_x() {
            let mean = sum[k] / draws as f64;
            let var = sum_sq[k] / draws as f64 - mean * mean;
            let se = (var / draws as f64).sqrt();
            assert!((mean - expect[k]).abs() <= 3.0 * se + 1e-12, "coordinate {k}");
        }
    }

    #[test]
    fn zerosarah_full_batch_is_exact() {
        let p = toy();
        let mut o = RegularizedOracle::new(&p, 2.0);
        let pts: Vec<Point> = (0..5).map(|k| point(&p, 0.02 * k as f64)).collect();
        let mut zs = ZeroSarahEstimator::new(&mut o, 0.25, ZeroSarahInit::WarmStart, &pts[0]);
        let b = all(p.n());
        zs.update(&mut o, &b, &b, &pts[0], None).unwrap();
        assert!(linalg::max_abs_diff(&zs.v, &o.exact_grad_x(&pts[0].x, &pts[0].z, &pts[0].y)) <= 1e-12);
        assert!(linalg::max_abs_diff(&zs.w, &o.exact_grad_y(&pts[0].x, &pts[0].y)) <= 1e-12);
        for k in 1..5 {
            zs.update(&mut o, &b, &b, &pts[k], Some(&pts[k - 1])).unwrap();
            let q = &pts[k];
            assert!(linalg::max_abs_diff(&zs.v, &o.exact_grad_x(&q.x, &q.z, &q.y)) <= 1e-10);
            assert!(linalg::max_abs_diff(&zs.w, &o.exact_grad_y(&q.x, &q.y)) <= 1e-10);
        }
        assert_eq!(o.calls(), 2 * 20 + 5 * 4 * 20);
    }

    #[test]
    fn zerosarah_first_step_is_exact_with_small_batch() {
        let p = toy();
        let mut o = RegularizedOracle::new(&p, 2.0);
        let q = point(&p, 0.0);
        let mut zs = ZeroSarahEstimator::new(&mut o, 0.2, ZeroSarahInit::WarmStart, &q);
        zs.update(&mut o, &[4, 7], &[4, 7], &q, None).unwrap();
        assert!(linalg::max_abs_diff(&zs.v, &o.exact_grad_x(&q.x, &q.z, &q.y)) <= 1e-12);
    }

    #[test]
    fn zerosarah_zero_init_scales_first_estimate() {
        let p = toy();
        let mut o = RegularizedOracle::new(&p, 2.0);
        let q = point(&p, 0.0);
        let mut zs = ZeroSarahEstimator::new(&mut o, 0.2, ZeroSarahInit::Zero, &q);
        assert_eq!(o.calls(), 0);
        let b = all(p.n());
        zs.update(&mut o, &b, &b, &q, None).unwrap();
        let full = o.exact_grad_x(&q.x, &q.z, &q.y);
        let scaled: Vec<f64> = full.iter().map(|g| 0.2 * g).collect();
        assert!(linalg::max_abs_diff(&zs.v, &scaled) <= 1e-12);
    }

    #[test]
    fn zerosarah_lambda_zero_at_fixed_point_keeps_estimate() {
        let p = toy();
        let mut o = RegularizedOracle::new(&p, 2.0);
        let q = point(&p, 0.0);
        let mut zs = ZeroSarahEstimator::new(&mut o, 0.0, ZeroSarahInit::Zero, &q);
        zs.v = vec![1.0, 2.0, 3.0, 4.0];
        zs.w = vec![-1.0, 0.5, 0.25];
        zs.update(&mut o, &[0, 1, 2], &[0, 1, 2], &q, Some(&q)).unwrap();
        assert_eq!(zs.v, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(zs.w, vec![-1.0, 0.5, 0.25]);
    }

    #[test]
    fn tracker_sums_do_not_drift() {
        let p = toy();
        let mut o = RegularizedOracle::new(&p, 2.0);
        let mut rng = rng_stream(22, 0);
        let start = point(&p, 0.0);
        let mut zs = ZeroSarahEstimator::new(&mut o, 0.2, ZeroSarahInit::WarmStart, &start);
        // A period longer than the run leaves only the incremental updates.
        zs.set_resum_period(u64::MAX);
        let mut prev = start.clone();
        for t in 0..10_000 {
            let cur = point(&p, 0.1 * (t as f64 * 0.01).sin());
            let batch = rng.sample_without_replacement(p.n(), 5);
            zs.update(&mut o, &batch, &batch, &cur, if t == 0 { None } else { Some(&prev) }).unwrap();
            prev = cur;
        }
        let (sd, sh) = zs.recomputed_sums();
        let (id, ih) = zs.tracker_sums();
        assert!(linalg::dist(&sd, id) <= 1e-9 * linalg::norm(&sd).max(1.0));
        assert!(linalg::dist(&sh, ih) <= 1e-9 * linalg::norm(&sh).max(1.0));
    }

    #[test]
    fn svrg_identities_and_unbiasedness() {
        let p = toy();
        let mut o = RegularizedOracle::new(&p, 0.0);
        let s = point(&p, 0.0);
        let q = point(&p, 0.07);
        let svrg = SvrgEstimator::new(&mut o, &s);
        let at_snapshot = svrg.estimate_x(&mut o, &[3], &s).unwrap();
        assert!(linalg::max_abs_diff(&at_snapshot, &o.exact_grad_x(&s.x, &s.z, &s.y)) <= 1e-12);
        let full = svrg.estimate_y(&mut o, &all(p.n()), &q).unwrap();
        assert!(linalg::max_abs_diff(&full, &o.exact_grad_y(&q.x, &q.y)) <= 1e-12);

        let truth = o.exact_grad_x(&q.x, &q.z, &q.y);
        let mut rng = rng_stream(23, 0);
        let draws = 100_000;
        let mut sum = vec![0.0; p.dim_x()];
        let mut sum_sq = vec![0.0; p.dim_x()];
        for _ in 0..draws {
            let v = svrg.estimate_x(&mut o, &[rng.index(p.n())], &q).unwrap();
            for k in 0..p.dim_x() {
                sum[k] += v[k];
                sum_sq[k] += v[k] * v[k];
            }
        }
        for k in 0..p.dim_x() {
            let mean = sum[k] / draws as f64;
            let se = ((sum_sq[k] / draws as f64 - mean * mean) / draws as f64).sqrt();
            assert!((mean - truth[k]).abs() <= 3.0 * se + 1e-12);
        }
    }

    #[test]
    fn minibatch_singleton_full_and_unbiased() {
        let p = toy();
        let mut o = RegularizedOracle::new(&p, 0.0);
        let q = point(&p, 0.0);
        let (v, w) = minibatch_update(&mut o, &[6], &[6], &q).unwrap();
        assert_eq!(v, p.comp_grad_x(6, &q.x, &q.y).unwrap());
        assert_eq!(w, p.comp_grad_y(6, &q.x, &q.y).unwrap());
        let (v, _) = minibatch_update(&mut o, &all(p.n()), &all(p.n()), &q).unwrap();
        assert!(linalg::max_abs_diff(&v, &p.grad_x(&q.x, &q.y)) <= 1e-12);

        let truth = p.grad_y(&q.x, &q.y);
        let mut rng = rng_stream(24, 0);
        let draws = 100_000;
        let mut sum = vec![0.0; p.dim_y()];
        let mut sum_sq = vec![0.0; p.dim_y()];
        for _ in 0..draws {
            let i = rng.index(p.n());
            let (_, w) = minibatch_update(&mut o, &[i], &[i], &q).unwrap();
            for k in 0..p.dim_y() {
                sum[k] += w[k];
                sum_sq[k] += w[k] * w[k];
            }
        }
        for k in 0..p.dim_y() {
            let mean = sum[k] / draws as f64;
            let se = ((sum_sq[k] / draws as f64 - mean * mean) / draws as f64).sqrt();
            assert!((mean - truth[k]).abs() <= 3.0 * se + 1e-12);
        }
    }
}
