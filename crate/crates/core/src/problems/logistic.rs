//! Distributionally robust logistic regression:
//! `min_x max_{y ∈ Δ_n} Σ_i y_i ℓ_i(x) + g(x)`, written as a finite sum with
//! `f_i(x, y) = n y_i ℓ_i(x) + g(x)`.

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{MinimaxProblem, ProblemError};
use crate::data::{sigmoid, Dataset, LabelKind};
use crate::sets::{project_simplex, FeasibleSet};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct RobustLogisticParams {
    pub lambda2: f64,
    pub alpha: f64,
    /// Weight of the optional dual regularizer `−(λ₁/2)‖n y − 1‖²`; off when
    /// `None`.
    pub lambda1: Option<f64>,
    pub box_bound: f64,
}

impl Default for RobustLogisticParams {
    fn default() -> Self {
        RobustLogisticParams { lambda2: 1e-3, alpha: 10.0, lambda1: None, box_bound: 100.0 }
    }
}

#[derive(Debug, Clone)]
pub struct RobustLogisticProblem {
    data: Dataset,
    /// Signed labels regardless of the input alphabet.
    signs: Vec<f64>,
    params: RobustLogisticParams,
    set_x: FeasibleSet,
    set_y: FeasibleSet,
    lipschitz: f64,
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

impl RobustLogisticProblem {
    pub fn new(data: Dataset, params: RobustLogisticParams) -> Result<Self, ProblemError> {
        if !(params.lambda2 >= 0.0 && params.alpha > 0.0) {
            return Err(ProblemError::Invalid("need λ₂ ≥ 0 and α > 0".into()));
        }
        if let Some(l1) = params.lambda1 {
            if !(l1 > 0.0) {
                return Err(ProblemError::Invalid(format!("λ₁ must be positive, got {l1}")));
            }
        }
        let n = data.n();
        let d = data.d();
        let set_x = FeasibleSet::uniform_box(d, -params.box_bound, params.box_bound)
            .map_err(|e| ProblemError::Invalid(e.to_string()))?;
        let set_y = FeasibleSet::simplex(n).map_err(|e| ProblemError::Invalid(e.to_string()))?;
        let signs = match data.label_kind {
            LabelKind::Signed => data.labels.clone(),
            LabelKind::Binary => data.labels.iter().map(|&t| 2.0 * t - 1.0).collect(),
        };
        let max_row = (0..n).map(|i| data.features.row_norm_sq(i)).fold(0.0, f64::max);
        let mut lipschitz = 0.25 * max_row + 2.0 * params.lambda2 * params.alpha;
        if let Some(l1) = params.lambda1 {
            lipschitz += l1 * (n * n) as f64;
        }
        Ok(RobustLogisticProblem { data, signs, params, set_x, set_y, lipschitz })
    }

    pub fn params(&self) -> &RobustLogisticParams {
        &self.params
    }

    /// `ℓ_i(x) = log(1 + exp(−b_i a_iᵀx))`
    pub fn loss(&self, i: usize, x: &[f64]) -> f64 {
        softplus(-self.signs[i] * self.data.features.row_dot(i, x))
    }

    pub fn losses(&self, x: &[f64]) -> Vec<f64> {
        (0..self.data.n()).map(|i| self.loss(i, x)).collect()
    }

    /// `g(x) = λ₂ Σ_j α x_j² / (1 + α x_j²)`
    pub fn regularizer(&self, x: &[f64]) -> f64 {
        let a = self.params.alpha;
        self.params.lambda2 * x.iter().map(|v| a * v * v / (1.0 + a * v * v)).sum::<f64>()
    }

    fn add_regularizer_grad(&self, x: &[f64], scale: f64, out: &mut [f64]) {
        let a = self.params.alpha;
        let c = scale * self.params.lambda2;
        for (o, v) in out.iter_mut().zip(x) {
            let den = 1.0 + a * v * v;
            *o += c * 2.0 * a * v / (den * den);
        }
    }

    /// Adds `scale · ∇ℓ_i(x)`.
    fn add_loss_grad(&self, i: usize, x: &[f64], scale: f64, out: &mut [f64]) {
        let b = self.signs[i];
        let m = self.data.features.row_dot(i, x);
        let coef = -b * sigmoid(-b * m);
        self.data.features.row_axpy(i, scale * coef, out);
    }

    fn dual_penalty(&self, y: &[f64]) -> f64 {
        match self.params.lambda1 {
            Some(l1) => {
                let n = y.len() as f64;
                -0.5 * l1 * y.iter().map(|v| (n * v - 1.0).powi(2)).sum::<f64>()
            }
            None => 0.0,
        }
    }

    fn add_dual_penalty_grad(&self, y: &[f64], scale: f64, out: &mut [f64]) {
        if let Some(l1) = self.params.lambda1 {
            let n = y.len() as f64;
            for (o, v) in out.iter_mut().zip(y) {
                *o -= scale * l1 * n * (n * v - 1.0);
            }
        }
    }
}

impl MinimaxProblem for RobustLogisticProblem {
    fn name(&self) -> &'static str {
        "robust_logistic"
    }

    fn n(&self) -> usize {
        self.data.n()
    }

    fn set_x(&self) -> &FeasibleSet {
        &self.set_x
    }

    fn set_y(&self) -> &FeasibleSet {
        &self.set_y
    }

    fn objective(&self, x: &[f64], y: &[f64]) -> f64 {
        let weighted: f64 = y
            .iter()
            .enumerate()
            .filter(|(_, w)| **w != 0.0)
            .map(|(i, w)| w * self.loss(i, x))
            .sum();
        weighted + self.regularizer(x) + self.dual_penalty(y)
    }

    fn component_objective(&self, i: usize, x: &[f64], y: &[f64]) -> f64 {
        let n = self.n() as f64;
        n * y[i] * self.loss(i, x) + self.regularizer(x) + self.dual_penalty(y)
    }

    fn accumulate_grad_x(&self, i: usize, x: &[f64], y: &[f64], scale: f64, out: &mut [f64]) {
        let n = self.n() as f64;
        if y[i] != 0.0 {
            self.add_loss_grad(i, x, scale * n * y[i], out);
        }
        self.add_regularizer_grad(x, scale, out);
    }

    fn accumulate_grad_y(&self, i: usize, x: &[f64], y: &[f64], scale: f64, out: &mut [f64]) {
        let n = self.n() as f64;
        out[i] += scale * n * self.loss(i, x);
        self.add_dual_penalty_grad(y, scale, out);
    }

    fn grad_x(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.data.d()];
        for (i, w) in y.iter().enumerate() {
            if *w != 0.0 {
                self.add_loss_grad(i, x, *w, &mut out);
            }
        }
        self.add_regularizer_grad(x, 1.0, &mut out);
        out
    }

    fn grad_y(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let mut out = self.losses(x);
        self.add_dual_penalty_grad(y, 1.0, &mut out);
        out
    }

    /// The `x`-block curvature bound `¼ max_i ‖a_i‖² + 2λ₂α` (plus `λ₁n²`
    /// for the dual regularizer).
    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    fn closed_form_primal(&self, x: &[f64]) -> Option<f64> {
        let losses = self.losses(x);
        let g = self.regularizer(x);
        match self.params.lambda1 {
            None => Some(losses.iter().copied().fold(f64::NEG_INFINITY, f64::max) + g),
            Some(l1) => {
                // Completing the square gives y* = P_Δ(1/n + ℓ/(λ₁n²)).
                let n = losses.len() as f64;
                let mut y: Vec<f64> = losses.iter().map(|l| 1.0 / n + l / (l1 * n * n)).collect();
                project_simplex(&mut y);
                let lin: f64 = y.iter().zip(&losses).map(|(a, b)| a * b).sum();
                Some(lin + g + self.dual_penalty(&y))
            }
        }
    }

    fn surrogate_bounds(&self) -> (bool, bool) {
        (true, false)
    }

    fn describe(&self) -> serde_json::Value {
        json!({
            "name": self.name(),
            "n": self.n(),
            "d": self.data.d(),
            "lambda2": self.params.lambda2,
            "alpha": self.params.alpha,
            "lambda1": self.params.lambda1,
            "box_bound": self.params.box_bound,
            "lipschitz": self.lipschitz,
        })
    }
}
