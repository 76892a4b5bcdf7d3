//! Inner oracles of the smoothed problem and the potential function.

use std::cell::Cell;

use serde::Serialize;

use super::{SchemeConstants, TheoryConstants, TheoryError};
use crate::estimators::Point;
use crate::linalg;
use crate::problems::MinimaxProblem;
use crate::sets::{ResidualMode, SetError};

/// `(res_x, res_y)` with exact full gradients of `f` and projected residuals.
pub fn game_stationarity(problem: &dyn MinimaxProblem, x: &[f64], y: &[f64], eta: f64) -> Result<(f64, f64), SetError> {
    game_stationarity_with(problem, x, y, eta, ResidualMode::Projected, ResidualMode::Projected)
}

pub fn game_stationarity_with(
    problem: &dyn MinimaxProblem,
    x: &[f64],
    y: &[f64],
    eta: f64,
    mode_x: ResidualMode,
    mode_y: ResidualMode,
) -> Result<(f64, f64), SetError> {
    let gx = problem.grad_x(x, y);
    let gy: Vec<f64> = problem.grad_y(x, y).into_iter().map(|g| -g).collect();
    let rx = problem.set_x().stationarity_residual(x, &gx, eta, mode_x)?;
    let ry = problem.set_y().stationarity_residual(y, &gy, eta, mode_y)?;
    Ok((rx, ry))
}

/// Numerical (or closed-form, where the problem offers one) solutions of
/// the inner problems `x(y, z)`, `d(y, z)`, `P(z)`, `x*(z)` and `h(x, z)`.
///
/// Every full gradient evaluated here is charged `n` units to a private
/// diagnostic counter.
pub struct InnerOracles<'a> {
    problem: &'a dyn MinimaxProblem,
    r: f64,
    l: f64,
    pub tol: f64,
    pub use_closed_form: bool,
    pub max_min_iterations: usize,
    pub max_max_iterations: usize,
    calls: Cell<u64>,
}

impl<'a> InnerOracles<'a> {
    pub fn new(problem: &'a dyn MinimaxProblem, r: f64, tol: f64) -> Result<Self, TheoryError> {
        let l = problem.lipschitz();
        if !(r > l) {
            return Err(TheoryError::Invalid(format!("inner problems need r > L, got r = {r}, L = {l}")));
        }
        if !(tol > 0.0) {
            return Err(TheoryError::Invalid("tolerance must be positive".into()));
        }
        Ok(InnerOracles {
            problem,
            r,
            l,
            tol,
            use_closed_form: true,
            max_min_iterations: 100_000,
            max_max_iterations: 1_000_000,
            calls: Cell::new(0),
        })
    }

    pub fn numerical(mut self) -> Self {
        self.use_closed_form = false;
        self
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn problem(&self) -> &'a dyn MinimaxProblem {
        self.problem
    }

    pub fn diag_calls(&self) -> u64 {
        self.calls.get()
    }

    fn charge(&self, blocks: u64) {
        self.calls.set(self.calls.get() + blocks * self.problem.n() as u64);
    }

    /// `K(x, z; y)`
    pub fn k_value(&self, x: &[f64], z: &[f64], y: &[f64]) -> f64 {
        self.problem.objective(x, y) + 0.5 * self.r * linalg::dist_sq(x, z)
    }

    pub fn grad_kx(&self, x: &[f64], z: &[f64], y: &[f64]) -> Vec<f64> {
        self.charge(1);
        let mut g = self.problem.grad_x(x, y);
        for ((gi, xi), zi) in g.iter_mut().zip(x).zip(z) {
            *gi += self.r * (xi - zi);
        }
        g
    }

    pub fn grad_ky(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        self.charge(1);
        self.problem.grad_y(x, y)
    }

    /// `x(y, z) = argmin_{x ∈ X} K(x, z; y)` by projected gradient with step
    /// `1/(L + r)`, stopped at gradient-mapping norm `tol`.
    pub fn x_of(&self, y: &[f64], z: &[f64]) -> Result<Vec<f64>, TheoryError> {
        if self.use_closed_form {
            if let Some(x) = self.problem.closed_form_inner_argmin(y, z, self.r) {
                return Ok(x);
            }
        }
        let step = 1.0 / (self.l + self.r);
        let set = self.problem.set_x();
        let mut x = z.to_vec();
        set.project_unchecked(&mut x);
        for _ in 0..self.max_min_iterations {
            let g = self.grad_kx(&x, z, y);
            let mut next: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - step * b).collect();
            set.project_unchecked(&mut next);
            let res = linalg::dist(&x, &next) / step;
            x = next;
            if res <= self.tol {
                return Ok(x);
            }
        }
        Err(TheoryError::NoConvergence { tol: self.tol, iterations: self.max_min_iterations })
    }

    /// `d(y, z) = K(x(y, z), z; y)`
    pub fn dual_value(&self, y: &[f64], z: &[f64]) -> Result<f64, TheoryError> {
        let x = self.x_of(y, z)?;
        Ok(self.k_value(&x, z, y))
    }

    /// Accelerated projected ascent with adaptive restart on a smooth
    /// concave function over `Y`, stopped at gradient-mapping norm `tol`.
    fn maximize_over_y<G>(&self, start: Vec<f64>, smoothness: f64, grad: G) -> Result<Vec<f64>, TheoryError>
    where
        G: Fn(&[f64]) -> Result<Vec<f64>, TheoryError>,
    {
        let set = self.problem.set_y();
        let step = 1.0 / smoothness;
        let mut y = start;
        set.project_unchecked(&mut y);
        let mut anchor = y.clone();
        let mut momentum = 1.0_f64;
        for _ in 0..self.max_max_iterations {
            let g = grad(&anchor)?;
            let mut next: Vec<f64> = anchor.iter().zip(&g).map(|(a, b)| a + step * b).collect();
            set.project_unchecked(&mut next);
            let res = linalg::dist(&anchor, &next) / step;
            if res <= self.tol {
                return Ok(next);
            }
            let m_next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
            // Restart when the step turns against the gradient.
            let progress: f64 = g.iter().zip(next.iter().zip(&y)).map(|(gi, (a, b))| gi * (a - b)).sum();
            if progress < 0.0 {
                momentum = 1.0;
                anchor = y.clone();
                continue;
            }
            let beta = (momentum - 1.0) / m_next;
            anchor = next.iter().zip(&y).map(|(a, b)| a + beta * (a - b)).collect();
            set.project_unchecked(&mut anchor);
            y = next;
            momentum = m_next;
        }
        Err(TheoryError::NoConvergence { tol: self.tol, iterations: self.max_max_iterations })
    }

    /// `P(z) = max_y d(y, z)` and a maximizer `y(z)`.
    pub fn prox(&self, z: &[f64]) -> Result<(f64, Vec<f64>), TheoryError> {
        self.prox_from(z, None)
    }

    pub fn prox_from(&self, z: &[f64], hint: Option<&[f64]>) -> Result<(f64, Vec<f64>), TheoryError> {
        if self.use_closed_form {
            if let Some(found) = self.problem.closed_form_prox(z, self.r) {
                return Ok(found);
            }
        }
        let l_d = self.l + self.l * super::sigma2(self.l, self.r);
        let start = hint.map(<[f64]>::to_vec).unwrap_or_else(|| self.problem.set_y().center());
        let y = self.maximize_over_y(start, l_d, |y| {
            let x = self.x_of(y, z)?;
            Ok(self.grad_ky(&x, y))
        })?;
        Ok((self.dual_value(&y, z)?, y))
    }

    /// `x*(z) = x(y(z), z)`
    pub fn x_star(&self, z: &[f64]) -> Result<Vec<f64>, TheoryError> {
        let (_, y) = self.prox(z)?;
        self.x_of(&y, z)
    }

    /// `h(x, z) = max_y K(x, z; y)`
    pub fn h_value(&self, x: &[f64], z: &[f64]) -> Result<f64, TheoryError> {
        let reg = 0.5 * self.r * linalg::dist_sq(x, z);
        if self.use_closed_form {
            if let Some(v) = self.problem.closed_form_primal(x) {
                return Ok(v + reg);
            }
        }
        let y = self.maximize_over_y(self.problem.set_y().center(), self.l, |y| Ok(self.grad_ky(x, y)))?;
        Ok(self.problem.objective(x, &y) + reg)
    }

    /// `y₊(z) = P_Y(y + η_y ∇_y K(x(y, z), z; y))`
    pub fn y_plus(&self, y: &[f64], z: &[f64], eta_y: f64) -> Result<Vec<f64>, TheoryError> {
        let x = self.x_of(y, z)?;
        let g = self.grad_ky(&x, y);
        let mut out: Vec<f64> = y.iter().zip(&g).map(|(a, b)| a + eta_y * b).collect();
        self.problem.set_y().project_unchecked(&mut out);
        Ok(out)
    }
}

/// The pieces of the potential at one iterate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PotentialTerms {
    pub k: f64,
    pub d: f64,
    pub p: f64,
    pub err_x_sq: f64,
    pub err_y_sq: f64,
    pub tracker_x: Option<f64>,
    pub tracker_y: Option<f64>,
    pub phi: f64,
}

impl PotentialTerms {
    /// `K − 2d + 2P`
    pub fn v(&self) -> f64 {
        self.k - 2.0 * self.d + 2.0 * self.p
    }
}

/// The potential at `point` with estimators `(v, w)`; the ZeroSARAH form
/// also needs the tracker mean-square errors.
pub fn potential_value(
    inner: &InnerOracles<'_>,
    point: &Point,
    v: &[f64],
    w: &[f64],
    constants: &TheoryConstants,
    trackers: Option<(f64, f64)>,
) -> Result<PotentialTerms, TheoryError> {
    let Point { x, y, z } = point;
    let k = inner.k_value(x, z, y);
    let d = inner.dual_value(y, z)?;
    let (p, _) = inner.prox_from(z, Some(y))?;
    let err_x_sq = linalg::dist_sq(&inner.grad_kx(x, z, y), v);
    let err_y_sq = linalg::dist_sq(&inner.grad_ky(x, y), w);
    let base = k - 2.0 * d + 2.0 * p;
    let phi = match (&constants.scheme, trackers) {
        (SchemeConstants::Pvr { p: prob }, _) => base + constants.gamma / (2.0 * prob) * (err_x_sq + err_y_sq),
        (SchemeConstants::ZeroSarah { tau, .. }, Some((tx, ty))) => {
            base + constants.gamma * (err_x_sq + err_y_sq) + tau * (tx + ty)
        }
        (SchemeConstants::ZeroSarah { .. }, None) => {
            return Err(TheoryError::Invalid("the ZeroSARAH potential needs tracker errors".into()))
        }
    };
    Ok(PotentialTerms {
        k,
        d,
        p,
        err_x_sq,
        err_y_sq,
        tracker_x: trackers.map(|t| t.0),
        tracker_y: trackers.map(|t| t.1),
        phi,
    })
}
