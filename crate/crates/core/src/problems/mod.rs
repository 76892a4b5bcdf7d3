//! Finite-sum minimax oracles `f(x, y) = (1/n) Σ_i f_i(x, y)`, minimized
//! over `x ∈ X` and maximized over `y ∈ Y`.

mod logistic;
mod poison;
mod toy;

pub use logistic::{RobustLogisticParams, RobustLogisticProblem};
pub use poison::{poison_accuracy, PoisonParams, PoisonProblem};
pub use toy::{ToyBilinearProblem, ToySpec};

use thiserror::Error;

use crate::linalg;
use crate::rng::rng_stream;
use crate::sets::FeasibleSet;

#[derive(Debug, Error, PartialEq)]
pub enum ProblemError {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("component index {index} out of range for n = {n}")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("{0} has no closed-form dual maximum")]
    Unsupported(&'static str),
    #[error("invalid problem: {0}")]
    Invalid(String),
}

/// The oracle interface every solver consumes.
///
/// The `accumulate_*` methods add `scale · ∇f_i` into `out` and are the hot
/// path; they assume valid indices and dimensions. The checked accessors
/// (`value`, `comp_grad_x`, ...) validate their inputs first.
pub trait MinimaxProblem: Send + Sync {
    fn name(&self) -> &'static str;

    /// Number of components.
    fn n(&self) -> usize;

    fn set_x(&self) -> &FeasibleSet;
    fn set_y(&self) -> &FeasibleSet;

    fn dim_x(&self) -> usize {
        self.set_x().dim()
    }

    fn dim_y(&self) -> usize {
        self.set_y().dim()
    }

    /// `f(x, y)` without input validation.
    fn objective(&self, x: &[f64], y: &[f64]) -> f64;

    /// `f_i(x, y)` without input validation.
    fn component_objective(&self, i: usize, x: &[f64], y: &[f64]) -> f64;

    fn accumulate_grad_x(&self, i: usize, x: &[f64], y: &[f64], scale: f64, out: &mut [f64]);
    fn accumulate_grad_y(&self, i: usize, x: &[f64], y: &[f64], scale: f64, out: &mut [f64]);

    /// Smoothness constant `L` shared by every component.
    fn lipschitz(&self) -> f64;

    /// `max_{y ∈ Y} f(x, y)` when it has a closed form.
    fn closed_form_primal(&self, _x: &[f64]) -> Option<f64> {
        None
    }

    /// Test-set accuracy of the model encoded in `(x, y)`, for problems that
    /// carry a held-out set.
    fn test_accuracy(&self, _x: &[f64], _y: &[f64]) -> Option<f64> {
        None
    }

    /// Closed form of `argmin_{x ∈ X} f(x, y) + (r/2)‖x − z‖²`, if known.
    fn closed_form_inner_argmin(&self, _y: &[f64], _z: &[f64], _r: f64) -> Option<Vec<f64>> {
        None
    }

    /// Closed form of `max_y min_x f(x, y) + (r/2)‖x − z‖²` and a maximizer.
    fn closed_form_prox(&self, _z: &[f64], _r: f64) -> Option<(f64, Vec<f64>)> {
        None
    }

    /// Whether `(X, Y)` are compact surrogates for unconstrained variables.
    fn surrogate_bounds(&self) -> (bool, bool) {
        (false, false)
    }

    /// Parameters for run manifests.
    fn describe(&self) -> serde_json::Value;

    /// `∇_x f(x, y)`: mean of the component gradients.
    fn grad_x(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut out = vec![0.0; self.dim_x()];
        let w = 1.0 / n as f64;
        for i in 0..n {
            self.accumulate_grad_x(i, x, y, w, &mut out);
        }
        out
    }

    /// `∇_y f(x, y)`: mean of the component gradients.
    fn grad_y(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut out = vec![0.0; self.dim_y()];
        let w = 1.0 / n as f64;
        for i in 0..n {
            self.accumulate_grad_y(i, x, y, w, &mut out);
        }
        out
    }

    fn value(&self, x: &[f64], y: &[f64]) -> Result<f64, ProblemError> {
        check_point(self, x, y)?;
        Ok(self.objective(x, y))
    }

    fn comp_grad_x(&self, i: usize, x: &[f64], y: &[f64]) -> Result<Vec<f64>, ProblemError> {
        check_component(self, i, x, y)?;
        let mut out = vec![0.0; self.dim_x()];
        self.accumulate_grad_x(i, x, y, 1.0, &mut out);
        Ok(out)
    }

    fn comp_grad_y(&self, i: usize, x: &[f64], y: &[f64]) -> Result<Vec<f64>, ProblemError> {
        check_component(self, i, x, y)?;
        let mut out = vec![0.0; self.dim_y()];
        self.accumulate_grad_y(i, x, y, 1.0, &mut out);
        Ok(out)
    }

    fn exact_primal(&self, x: &[f64]) -> Result<f64, ProblemError> {
        if x.len() != self.dim_x() {
            return Err(ProblemError::DimensionMismatch {
                what: "x",
                expected: self.dim_x(),
                got: x.len(),
            });
        }
        self.closed_form_primal(x)
            .ok_or(ProblemError::Unsupported(self.name()))
    }
}

fn check_point<P: MinimaxProblem + ?Sized>(p: &P, x: &[f64], y: &[f64]) -> Result<(), ProblemError> {
    if x.len() != p.dim_x() {
        return Err(ProblemError::DimensionMismatch { what: "x", expected: p.dim_x(), got: x.len() });
    }
    if y.len() != p.dim_y() {
        return Err(ProblemError::DimensionMismatch { what: "y", expected: p.dim_y(), got: y.len() });
    }
    debug_assert!(p.set_x().contains(x, 1e-9), "x outside X");
    debug_assert!(p.set_y().contains(y, 1e-9), "y outside Y");
    Ok(())
}

fn check_component<P: MinimaxProblem + ?Sized>(
    p: &P,
    i: usize,
    x: &[f64],
    y: &[f64],
) -> Result<(), ProblemError> {
    if i >= p.n() {
        return Err(ProblemError::IndexOutOfRange { index: i, n: p.n() });
    }
    check_point(p, x, y)
}

/// Draws a point of `set`, restricted to `center ± radius` per coordinate for
/// box-shaped sets so that huge surrogate boxes are sampled where iterates live.
pub fn sample_point(set: &FeasibleSet, radius: f64, rng: &mut crate::rng::RngStream) -> Vec<f64> {
    match set {
        FeasibleSet::Simplex { dim } => {
            // Normalized exponentials are uniform on the simplex.
            let e: Vec<f64> = (0..*dim).map(|_| -(1.0 - rng.uniform()).ln()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|v| v / s).collect()
        }
        FeasibleSet::Box { lo, hi } => lo
            .iter()
            .zip(hi)
            .map(|(l, h)| {
                let c = 0.5 * (l + h);
                let half = (0.5 * (h - l)).min(radius);
                rng.uniform_range(c - half, c + half)
            })
            .collect(),
        FeasibleSet::InfBall { center, radius: r } => center
            .iter()
            .map(|c| rng.uniform_range(c - r.min(radius), c + r.min(radius)))
            .collect(),
    }
}

/// Largest observed ratio `‖∇f(p₁) − ∇f(p₂)‖ / (‖x₁ − x₂‖ + ‖y₁ − y₂‖)` over
/// random pairs, times a safety factor.
pub fn estimate_lipschitz<P: MinimaxProblem + ?Sized>(
    problem: &P,
    pairs: usize,
    radius: f64,
    safety: f64,
    seed: u64,
) -> f64 {
    let mut rng = rng_stream(seed, 0x11f5);
    let mut best = 0.0_f64;
    for _ in 0..pairs {
        let x1 = sample_point(problem.set_x(), radius, &mut rng);
        let y1 = sample_point(problem.set_y(), radius, &mut rng);
        let x2 = sample_point(problem.set_x(), radius, &mut rng);
        let y2 = sample_point(problem.set_y(), radius, &mut rng);
        let gx = linalg::dist(&problem.grad_x(&x1, &y1), &problem.grad_x(&x2, &y2));
        let gy = linalg::dist(&problem.grad_y(&x1, &y1), &problem.grad_y(&x2, &y2));
        let den = linalg::dist(&x1, &x2) + linalg::dist(&y1, &y2);
        if den > 0.0 {
            best = best.max(gx.max(gy) / den);
        }
    }
    best * safety
}

/// Central differences of `f_i` against the analytic component
/// gradients at one point; returns the worst relative error, with the
/// denominator floored at 1.
pub fn fd_relative_error<P: MinimaxProblem + ?Sized>(
    p: &P,
    i: usize,
    x: &[f64],
    y: &[f64],
) -> Result<f64, ProblemError> {
    let h = 1e-6;
    let gx = p.comp_grad_x(i, x, y)?;
    let gy = p.comp_grad_y(i, x, y)?;
    let mut fd_x = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for j in 0..x.len() {
        xp[j] = x[j] + h;
        let up = p.component_objective(i, &xp, y);
        xp[j] = x[j] - h;
        let dn = p.component_objective(i, &xp, y);
        xp[j] = x[j];
        fd_x[j] = (up - dn) / (2.0 * h);
    }
    let mut fd_y = vec![0.0; y.len()];
    let mut yp = y.to_vec();
    for j in 0..y.len() {
        yp[j] = y[j] + h;
        let up = p.component_objective(i, x, &yp);
        yp[j] = y[j] - h;
        let dn = p.component_objective(i, x, &yp);
        yp[j] = y[j];
        fd_y[j] = (up - dn) / (2.0 * h);
    }
    let rel = |a: &[f64], b: &[f64]| linalg::dist(a, b) / linalg::norm(a).max(linalg::norm(b)).max(1.0);
    Ok(rel(&gx, &fd_x).max(rel(&gy, &fd_y)))
}
