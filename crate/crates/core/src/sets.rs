//! Closed convex compact feasible sets with exact Euclidean projections.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;

#[derive(Debug, Error, PartialEq)]
pub enum SetError {
    #[error("dimension mismatch: set has dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid set: {0}")]
    Invalid(String),
    #[error("step parameter eta must be positive, got {0}")]
    NonPositiveEta(f64),
    #[error("exact normal-cone distance is only available for box-shaped sets")]
    ExactUnsupported,
}

/// A feasible set.
///
/// `InfBall` is the box `center ± radius` in every coordinate; it is kept as
/// its own variant because its diameter has a closed form in terms of the
/// radius and because attack budgets are naturally expressed that way.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeasibleSet {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Simplex { dim: usize },
    InfBall { center: Vec<f64>, radius: f64 },
}

/// How [`FeasibleSet::stationarity_residual`] measures stationarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ResidualMode {
    /// `‖p − P(p − η g)‖ / η`
    #[default]
    Projected,
    /// `dist(0, g + N_S(p))`, box-shaped sets only.
    Exact,
}

impl FeasibleSet {
    pub fn new_box(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, SetError> {
        if lo.len() != hi.len() {
            return Err(SetError::Invalid(format!(
                "box bounds have lengths {} and {}",
                lo.len(),
                hi.len()
            )));
        }
        if lo.is_empty() {
            return Err(SetError::Invalid("box must have positive dimension".into()));
        }
        for (i, (l, h)) in lo.iter().zip(&hi).enumerate() {
            if !l.is_finite() || !h.is_finite() {
                return Err(SetError::Invalid(format!("box bound {i} is not finite")));
            }
            if l > h {
                return Err(SetError::Invalid(format!("box bound {i}: lo {l} > hi {h}")));
            }
        }
        Ok(FeasibleSet::Box { lo, hi })
    }

    /// The box `[lo, hi]^dim`.
    pub fn uniform_box(dim: usize, lo: f64, hi: f64) -> Result<Self, SetError> {
        Self::new_box(vec![lo; dim], vec![hi; dim])
    }

    pub fn simplex(dim: usize) -> Result<Self, SetError> {
        if dim == 0 {
            return Err(SetError::Invalid("simplex must have positive dimension".into()));
        }
        Ok(FeasibleSet::Simplex { dim })
    }

    pub fn inf_ball(center: Vec<f64>, radius: f64) -> Result<Self, SetError> {
        if center.is_empty() {
            return Err(SetError::Invalid("ball must have positive dimension".into()));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(SetError::Invalid(format!("radius must be positive, got {radius}")));
        }
        if center.iter().any(|c| !c.is_finite()) {
            return Err(SetError::Invalid("ball center is not finite".into()));
        }
        Ok(FeasibleSet::InfBall { center, radius })
    }

    /// Re-checks the variant invariants; used after deserialization.
    pub fn validate(&self) -> Result<(), SetError> {
        match self {
            FeasibleSet::Box { lo, hi } => Self::new_box(lo.clone(), hi.clone()).map(|_| ()),
            FeasibleSet::Simplex { dim } => Self::simplex(*dim).map(|_| ()),
            FeasibleSet::InfBall { center, radius } => {
                Self::inf_ball(center.clone(), *radius).map(|_| ())
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            FeasibleSet::Box { lo, .. } => lo.len(),
            FeasibleSet::Simplex { dim } => *dim,
            FeasibleSet::InfBall { center, .. } => center.len(),
        }
    }

    fn check_dim(&self, len: usize) -> Result<(), SetError> {
        if len != self.dim() {
            return Err(SetError::DimensionMismatch {
                expected: self.dim(),
                got: len,
            });
        }
        Ok(())
    }

    /// Per-coordinate bounds for the box-shaped variants.
    fn coordinate_bounds(&self, i: usize) -> Option<(f64, f64)> {
        match self {
            FeasibleSet::Box { lo, hi } => Some((lo[i], hi[i])),
            FeasibleSet::InfBall { center, radius } => {
                Some((center[i] - radius, center[i] + radius))
            }
            FeasibleSet::Simplex { .. } => None,
        }
    }

    pub fn project(&self, p: &[f64]) -> Result<Vec<f64>, SetError> {
        self.check_dim(p.len())?;
        let mut out = p.to_vec();
        self.project_unchecked(&mut out);
        Ok(out)
    }

    pub fn project_in_place(&self, p: &mut [f64]) -> Result<(), SetError> {
        self.check_dim(p.len())?;
        self.project_unchecked(p);
        Ok(())
    }

    /// Projection without the dimension check; callers guarantee the length.
    pub(crate) fn project_unchecked(&self, p: &mut [f64]) {
        debug_assert_eq!(p.len(), self.dim());
        match self {
            FeasibleSet::Box { lo, hi } => {
                for ((v, l), h) in p.iter_mut().zip(lo).zip(hi) {
                    *v = v.clamp(*l, *h);
                }
            }
            FeasibleSet::InfBall { center, radius } => {
                for (v, c) in p.iter_mut().zip(center) {
                    *v = v.clamp(c - radius, c + radius);
                }
            }
            FeasibleSet::Simplex { .. } => project_simplex(p),
        }
    }

    /// Membership within an absolute tolerance.
    pub fn contains(&self, p: &[f64], tol: f64) -> bool {
        if p.len() != self.dim() {
            return false;
        }
        match self {
            FeasibleSet::Simplex { .. } => {
                p.iter().all(|&v| v >= -tol) && (p.iter().sum::<f64>() - 1.0).abs() <= tol
            }
            _ => p.iter().enumerate().all(|(i, &v)| {
                let (l, h) = self.coordinate_bounds(i).expect("box-shaped");
                v >= l - tol && v <= h + tol
            }),
        }
    }

    /// True when some coordinate sits on a box face. Always false for the simplex.
    pub fn touches_boundary(&self, p: &[f64]) -> bool {
        match self {
            FeasibleSet::Simplex { .. } => false,
            _ => p.iter().enumerate().any(|(i, &v)| {
                let (l, h) = self.coordinate_bounds(i).expect("box-shaped");
                v <= l || v >= h
            }),
        }
    }

    pub fn diameter(&self) -> f64 {
        match self {
            FeasibleSet::Box { lo, hi } => linalg::dist(hi, lo),
            FeasibleSet::Simplex { dim } => {
                if *dim >= 2 {
                    std::f64::consts::SQRT_2
                } else {
                    0.0
                }
            }
            FeasibleSet::InfBall { center, radius } => {
                2.0 * radius * (center.len() as f64).sqrt()
            }
        }
    }

    /// Canonical seed-independent starting point: box midpoint, ball
    /// center or simplex barycenter.
    pub fn center(&self) -> Vec<f64> {
        match self {
            FeasibleSet::Box { lo, hi } => lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)).collect(),
            FeasibleSet::Simplex { dim } => vec![1.0 / *dim as f64; *dim],
            FeasibleSet::InfBall { center, .. } => center.clone(),
        }
    }

    /// Stationarity of `p` for the linearized objective `g`.
    ///
    /// In projected mode this is `‖p − P(p − η g)‖ / η`; in exact mode it is
    /// the distance from `−g` to the normal cone at `p`, computed
    /// coordinatewise for box-shaped sets.
    pub fn stationarity_residual(
        &self,
        p: &[f64],
        g: &[f64],
        eta: f64,
        mode: ResidualMode,
    ) -> Result<f64, SetError> {
        self.check_dim(p.len())?;
        self.check_dim(g.len())?;
        if !(eta > 0.0) {
            return Err(SetError::NonPositiveEta(eta));
        }
        match mode {
            ResidualMode::Projected => {
                let mut q: Vec<f64> = p.iter().zip(g).map(|(pi, gi)| pi - eta * gi).collect();
                self.project_unchecked(&mut q);
                Ok(linalg::dist(p, &q) / eta)
            }
            ResidualMode::Exact => self.normal_cone_distance(p, g),
        }
    }

    /// `dist(0, g + N_S(p))` for box-shaped sets.
    pub fn normal_cone_distance(&self, p: &[f64], g: &[f64]) -> Result<f64, SetError> {
        if matches!(self, FeasibleSet::Simplex { .. }) {
            return Err(SetError::ExactUnsupported);
        }
        self.check_dim(p.len())?;
        self.check_dim(g.len())?;
        let mut acc = 0.0;
        for (i, (&pi, &gi)) in p.iter().zip(g).enumerate() {
            let (l, h) = self.coordinate_bounds(i).expect("box-shaped");
            let r = if l == h {
                0.0
            } else if pi <= l {
                // N = (-inf, 0]: only a negative gradient is left unblocked.
                gi.min(0.0)
            } else if pi >= h {
                gi.max(0.0)
            } else {
                gi
            };
            acc += r * r;
        }
        Ok(acc.sqrt())
    }
}

/// Euclidean projection onto the unit simplex by sort-and-threshold.
///
/// Inputs that are already feasible to rounding precision are returned
/// untouched, which makes the projection exactly idempotent.
pub fn project_simplex(p: &mut [f64]) {
    let d = p.len();
    let sum: f64 = p.iter().sum();
    let feasible_tol = 8.0 * f64::EPSILON * (d as f64).max(1.0);
    if p.iter().all(|&v| v >= 0.0) && (sum - 1.0).abs() <= feasible_tol {
        return;
    }
    let mut u = p.to_vec();
    u.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        cumsum += uk;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if uk - t > 0.0 {
            theta = t;
        } else {
            break;
        }
    }
    for v in p.iter_mut() {
        *v = (*v - theta).max(0.0);
    }
}
