//! Desk-scale instance with analytic dual maximum:
//! `f_i(x, y) = xᵀA_i y − (c/2)‖x‖²` over a box `X` and the simplex `Y`.

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{MinimaxProblem, ProblemError};
use crate::linalg;
use crate::rng::rng_stream;
use crate::sets::FeasibleSet;

/// Generator parameters for a random toy instance.
///
/// `A_i = Ā + spread · G_i` with `Ā = mean_scale · M` and `M`, `G_i` having
/// i.i.d. standard normal entries; the `G_i` are centered so that the mean
/// of the components is exactly `Ā` up to rounding.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ToySpec {
    pub n: usize,
    pub dim_x: usize,
    pub dim_y: usize,
    pub curvature: f64,
    pub mean_scale: f64,
    pub spread: f64,
    pub box_bound: f64,
    pub seed: u64,
}

impl Default for ToySpec {
    fn default() -> Self {
        ToySpec {
            n: 50,
            dim_x: 5,
            dim_y: 5,
            curvature: 0.5,
            mean_scale: 0.1,
            spread: 0.1,
            box_bound: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyBilinearProblem {
    n: usize,
    dim_x: usize,
    dim_y: usize,
    /// `n` row-major `dim_x × dim_y` blocks.
    components: Vec<f64>,
    mean: Vec<f64>,
    curvature: f64,
    set_x: FeasibleSet,
    set_y: FeasibleSet,
    lipschitz: f64,
}

impl ToyBilinearProblem {
    /// Builds an instance from explicit component matrices (row-major,
    /// `dim_x × dim_y` each).
    pub fn new(
        matrices: Vec<Vec<f64>>,
        dim_x: usize,
        dim_y: usize,
        curvature: f64,
        set_x: FeasibleSet,
    ) -> Result<Self, ProblemError> {
        if matrices.is_empty() {
            return Err(ProblemError::Invalid("need at least one component".into()));
        }
        if !(curvature > 0.0) {
            return Err(ProblemError::Invalid(format!("curvature must be positive, got {curvature}")));
        }
        if matches!(set_x, FeasibleSet::Simplex { .. }) || set_x.dim() != dim_x {
            return Err(ProblemError::Invalid("X must be a box of dimension dim_x".into()));
        }
        let block = dim_x * dim_y;
        if let Some(bad) = matrices.iter().find(|m| m.len() != block) {
            return Err(ProblemError::DimensionMismatch { what: "A_i", expected: block, got: bad.len() });
        }
        let n = matrices.len();
        let mut mean = vec![0.0; block];
        for m in &matrices {
            linalg::axpy(1.0 / n as f64, m, &mut mean);
        }
        let max_norm = matrices
            .iter()
            .map(|m| linalg::spectral_norm(m, dim_x, dim_y))
            .fold(0.0, f64::max);
        let set_y = FeasibleSet::simplex(dim_y).map_err(|e| ProblemError::Invalid(e.to_string()))?;
        Ok(ToyBilinearProblem {
            n,
            dim_x,
            dim_y,
            components: matrices.concat(),
            mean,
            curvature,
            set_x,
            set_y,
            // Relative slack absorbs the power-iteration error.
            lipschitz: (max_norm + curvature) * (1.0 + 1e-9),
        })
    }

    pub fn random(spec: &ToySpec) -> Result<Self, ProblemError> {
        if spec.n == 0 || spec.dim_x == 0 || spec.dim_y == 0 {
            return Err(ProblemError::Invalid("toy dimensions must be positive".into()));
        }
        if !(spec.box_bound > 0.0) {
            return Err(ProblemError::Invalid("box bound must be positive".into()));
        }
        let mut rng = rng_stream(spec.seed, 0x70f);
        let block = spec.dim_x * spec.dim_y;
        let base: Vec<f64> = (0..block).map(|_| spec.mean_scale * rng.standard_normal()).collect();
        let mut noise: Vec<Vec<f64>> = (0..spec.n)
            .map(|_| (0..block).map(|_| spec.spread * rng.standard_normal()).collect())
            .collect();
        if spec.n > 1 {
            let mut centre = vec![0.0; block];
            for g in &noise {
                linalg::axpy(1.0 / spec.n as f64, g, &mut centre);
            }
            for g in noise.iter_mut() {
                linalg::axpy(-1.0, &centre, g);
            }
        } else {
            noise[0].iter_mut().for_each(|v| *v = 0.0);
        }
        let matrices = noise
            .into_iter()
            .map(|g| base.iter().zip(&g).map(|(b, e)| b + e).collect())
            .collect();
        let set_x = FeasibleSet::uniform_box(spec.dim_x, -spec.box_bound, spec.box_bound)
            .map_err(|e| ProblemError::Invalid(e.to_string()))?;
        Self::new(matrices, spec.dim_x, spec.dim_y, spec.curvature, set_x)
    }

    pub fn curvature(&self) -> f64 {
        self.curvature
    }

    /// Row-major mean matrix `Ā`.
    pub fn mean_matrix(&self) -> &[f64] {
        &self.mean
    }

    fn block(&self, i: usize) -> &[f64] {
        let b = self.dim_x * self.dim_y;
        &self.components[i * b..(i + 1) * b]
    }

    fn bilinear(m: &[f64], dim_y: usize, x: &[f64], y: &[f64]) -> f64 {
        x.iter()
            .enumerate()
            .map(|(r, xr)| xr * linalg::dot(&m[r * dim_y..(r + 1) * dim_y], y))
            .sum()
    }

    /// `Āy`
    fn mean_times(&self, y: &[f64]) -> Vec<f64> {
        (0..self.dim_x)
            .map(|r| linalg::dot(&self.mean[r * self.dim_y..(r + 1) * self.dim_y], y))
            .collect()
    }

    /// `Āᵀx`
    fn mean_transpose_times(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim_y];
        for (r, xr) in x.iter().enumerate() {
            linalg::axpy(*xr, &self.mean[r * self.dim_y..(r + 1) * self.dim_y], &mut out);
        }
        out
    }

    /// Unprojected minimizer `(r z − Āy) / (r − c)` of the smoothed objective.
    fn raw_inner_argmin(&self, y: &[f64], z: &[f64], r: f64) -> Vec<f64> {
        let s = r - self.curvature;
        self.mean_times(y)
            .iter()
            .zip(z)
            .map(|(ay, zi)| (r * zi - ay) / s)
            .collect()
    }

    fn smoothed_value(&self, x: &[f64], z: &[f64], y: &[f64], r: f64) -> f64 {
        self.objective(x, y) + 0.5 * r * linalg::dist_sq(x, z)
    }
}

impl MinimaxProblem for ToyBilinearProblem {
    fn name(&self) -> &'static str {
        "toy_bilinear"
    }

    fn n(&self) -> usize {
        self.n
    }

    fn set_x(&self) -> &FeasibleSet {
        &self.set_x
    }

    fn set_y(&self) -> &FeasibleSet {
        &self.set_y
    }

    fn objective(&self, x: &[f64], y: &[f64]) -> f64 {
        Self::bilinear(&self.mean, self.dim_y, x, y) - 0.5 * self.curvature * linalg::norm_sq(x)
    }

    fn component_objective(&self, i: usize, x: &[f64], y: &[f64]) -> f64 {
        Self::bilinear(self.block(i), self.dim_y, x, y) - 0.5 * self.curvature * linalg::norm_sq(x)
    }

    fn accumulate_grad_x(&self, i: usize, x: &[f64], y: &[f64], scale: f64, out: &mut [f64]) {
        let m = self.block(i);
        for r in 0..self.dim_x {
            out[r] += scale * (linalg::dot(&m[r * self.dim_y..(r + 1) * self.dim_y], y) - self.curvature * x[r]);
        }
    }

    fn accumulate_grad_y(&self, i: usize, x: &[f64], _y: &[f64], scale: f64, out: &mut [f64]) {
        let m = self.block(i);
        for (r, xr) in x.iter().enumerate() {
            linalg::axpy(scale * xr, &m[r * self.dim_y..(r + 1) * self.dim_y], out);
        }
    }

    fn grad_x(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        self.mean_times(y)
            .into_iter()
            .zip(x)
            .map(|(ay, xr)| ay - self.curvature * xr)
            .collect()
    }

    fn grad_y(&self, x: &[f64], _y: &[f64]) -> Vec<f64> {
        self.mean_transpose_times(x)
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    fn closed_form_primal(&self, x: &[f64]) -> Option<f64> {
        let best = self
            .mean_transpose_times(x)
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        Some(best - 0.5 * self.curvature * linalg::norm_sq(x))
    }

    /// The smoothed objective is an isotropic quadratic in `x` once
    /// `r > c`, so the box minimizer is the clamped free minimizer.
    fn closed_form_inner_argmin(&self, y: &[f64], z: &[f64], r: f64) -> Option<Vec<f64>> {
        if !(r > self.curvature) {
            return None;
        }
        let mut x = self.raw_inner_argmin(y, z, r);
        self.set_x.project_unchecked(&mut x);
        Some(x)
    }

    /// Exact `P(z)` for the box-constrained inner problem.
    ///
    /// With the pattern of clamped coordinates of `x(y, z)` held fixed, the
    /// dual function is a concave quadratic in `y`, maximized over the
    /// simplex by support enumeration. The pattern is updated from the
    /// maximizer until it repeats; the result is then certified by the
    /// optimality conditions of the true dual, whose gradient is `Āᵀx(y, z)`.
    /// Returns `None` when no certified pattern is found.
    fn closed_form_prox(&self, z: &[f64], r: f64) -> Option<(f64, Vec<f64>)> {
        if !(r > self.curvature) || self.dim_y > 12 {
            return None;
        }
        let (lo, hi) = match &self.set_x {
            FeasibleSet::Box { lo, hi } => (lo.clone(), hi.clone()),
            FeasibleSet::InfBall { center, radius } => (
                center.iter().map(|c| c - radius).collect::<Vec<_>>(),
                center.iter().map(|c| c + radius).collect::<Vec<_>>(),
            ),
            FeasibleSet::Simplex { .. } => return None,
        };
        let (m, dx) = (self.dim_y, self.dim_x);
        let s = r - self.curvature;
        // 0 free, -1 at the lower bound, 1 at the upper bound.
        let pattern_at = |y: &[f64]| -> Vec<i8> {
            self.raw_inner_argmin(y, z, r)
                .iter()
                .enumerate()
                .map(|(j, v)| if *v <= lo[j] { -1 } else if *v >= hi[j] { 1 } else { 0 })
                .collect()
        };
        let mut pattern = vec![0i8; dx];
        let mut seen: Vec<Vec<i8>> = Vec::new();
        for _ in 0..64 {
            if seen.contains(&pattern) {
                return None;
            }
            seen.push(pattern.clone());
            // max_y −½yᵀQy + bᵀy with Q = Ā_FᵀĀ_F / s and
            // b = (r/s) Ā_Fᵀ z_F + Ā_Cᵀ x̄_C.
            let mut q = vec![0.0; m * m];
            let mut b = vec![0.0; m];
            for row in 0..dx {
                let a = &self.mean[row * m..(row + 1) * m];
                match pattern[row] {
                    0 => {
                        for j in 0..m {
                            b[j] += r / s * a[j] * z[row];
                            for k in 0..m {
                                q[j * m + k] += a[j] * a[k] / s;
                            }
                        }
                    }
                    side => {
                        let bound = if side < 0 { lo[row] } else { hi[row] };
                        for j in 0..m {
                            b[j] += a[j] * bound;
                        }
                    }
                }
            }
            let y = simplex_qp_max(&q, &b, m)?;
            let next = pattern_at(&y);
            if next == pattern {
                let mut x = self.raw_inner_argmin(&y, z, r);
                self.set_x.project_unchecked(&mut x);
                let g = self.mean_transpose_times(&x);
                let top = g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let scale = 1.0 + g.iter().map(|v| v.abs()).fold(0.0, f64::max);
                let certified = y.iter().zip(&g).all(|(yk, gk)| *yk <= 0.0 || top - gk <= 1e-9 * scale);
                if !certified {
                    return None;
                }
                return Some((self.smoothed_value(&x, z, &y, r), y));
            }
            pattern = next;
        }
        None
    }

    fn describe(&self) -> serde_json::Value {
        json!({
            "name": self.name(),
            "n": self.n,
            "dim_x": self.dim_x,
            "dim_y": self.dim_y,
            "curvature": self.curvature,
            "lipschitz": self.lipschitz,
            "set_x": self.set_x,
            "set_y": self.set_y,
        })
    }
}

/// Maximizer of `−½yᵀQy + bᵀy` over the probability simplex by support
/// enumeration; supports with a singular bordered system are skipped, which
/// never removes every maximizer.
fn simplex_qp_max(q: &[f64], b: &[f64], m: usize) -> Option<Vec<f64>> {
    let objective = |y: &[f64]| {
        let mut quad = 0.0;
        for j in 0..m {
            for k in 0..m {
                quad += y[j] * q[j * m + k] * y[k];
            }
        }
        -0.5 * quad + linalg::dot(b, y)
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1u32 << m) {
        let support: Vec<usize> = (0..m).filter(|j| mask & (1 << j) != 0).collect();
        let k = support.len();
        // Bordered KKT system [Q_SS 1; 1ᵀ 0][y_S; μ] = [b_S; 1].
        let mut kkt = vec![0.0; (k + 1) * (k + 1)];
        let mut rhs = vec![0.0; k + 1];
        for (a, &ja) in support.iter().enumerate() {
            for (c, &jc) in support.iter().enumerate() {
                kkt[a * (k + 1) + c] = q[ja * m + jc];
            }
            kkt[a * (k + 1) + k] = 1.0;
            kkt[k * (k + 1) + a] = 1.0;
            rhs[a] = b[ja];
        }
        rhs[k] = 1.0;
        let Some(sol) = linalg::solve_dense(kkt, rhs) else {
            continue;
        };
        if sol[..k].iter().any(|&v| v < -1e-12) {
            continue;
        }
        let mut y = vec![0.0; m];
        for (a, &ja) in support.iter().enumerate() {
            y[ja] = sol[a].max(0.0);
        }
        let total: f64 = y.iter().sum();
        y.iter_mut().for_each(|v| *v /= total);
        let val = objective(&y);
        if best.as_ref().is_none_or(|(bv, _)| val > *bv) {
            best = Some((val, y));
        }
    }
    best.map(|(_, y)| y)
}
