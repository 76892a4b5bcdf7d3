//! Data-poisoning attack against logistic regression.
//!
//! The attacker maximizes the trained model's loss over a perturbation
//! `‖x‖∞ ≤ ε` added to a poisoned subset while the model minimizes it. In
//! solver form the attacker is the primal variable and the negated loss is
//! maximized over the model parameters `θ`:
//! `min_{x} max_{θ} −[F(x, θ; D₁) + F(0, θ; D₂)]`, with `F` the average
//! cross-entropy over a subset.

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{estimate_lipschitz, MinimaxProblem, ProblemError};
use crate::data::{sigmoid, DataError, Dataset, LabelKind, PoisonSplit};
use crate::sets::FeasibleSet;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct PoisonParams {
    pub epsilon: f64,
    /// Half-width of the box standing in for unconstrained `θ`.
    pub theta_bound: f64,
    /// Overrides the sampled smoothness estimate when set.
    pub lipschitz: Option<f64>,
    pub lipschitz_pairs: usize,
    pub lipschitz_radius: f64,
    pub seed: u64,
}

impl Default for PoisonParams {
    fn default() -> Self {
        PoisonParams {
            epsilon: 2.0,
            theta_bound: 1e3,
            lipschitz: None,
            lipschitz_pairs: 200,
            lipschitz_radius: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PoisonProblem {
    poisoned: Dataset,
    clean: Dataset,
    test: Dataset,
    params: PoisonParams,
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

/// Fraction of samples whose prediction `1{σ(zᵀθ) > 1/2}` matches the label.
pub fn poison_accuracy(theta: &[f64], data: &Dataset) -> Result<f64, DataError> {
    if data.n() == 0 {
        return Err(DataError::Empty);
    }
    if theta.len() != data.d() {
        return Err(DataError::Argument(format!("θ has {} entries, data has d = {}", theta.len(), data.d())));
    }
    let hits = (0..data.n())
        .filter(|&i| {
            let predicted = sigmoid(data.features.row_dot(i, theta)) > 0.5;
            predicted == (data.labels[i] > 0.5)
        })
        .count();
    Ok(hits as f64 / data.n() as f64)
}

impl PoisonProblem {
    pub fn new(split: PoisonSplit, params: PoisonParams) -> Result<Self, ProblemError> {
        let d = split.poisoned.d();
        if split.clean.d() != d || split.test.d() != d {
            return Err(ProblemError::Invalid("split parts disagree on d".into()));
        }
        for part in [&split.poisoned, &split.clean, &split.test] {
            if part.label_kind != LabelKind::Binary {
                return Err(ProblemError::Invalid("poisoning needs {0, 1} labels".into()));
            }
        }
        if !(params.epsilon > 0.0 && params.theta_bound > 0.0) {
            return Err(ProblemError::Invalid("ε and the θ bound must be positive".into()));
        }
        let set_x = FeasibleSet::inf_ball(vec![0.0; d], params.epsilon)
            .map_err(|e| ProblemError::Invalid(e.to_string()))?;
        let set_y = FeasibleSet::uniform_box(d, -params.theta_bound, params.theta_bound)
            .map_err(|e| ProblemError::Invalid(e.to_string()))?;
        let mut problem = PoisonProblem {
            poisoned: split.poisoned,
            clean: split.clean,
            test: split.test,
            params,
            set_x,
            set_y,
            lipschitz: 0.0,
        };
        problem.lipschitz = match problem.params.lipschitz {
            Some(l) if l > 0.0 => l,
            Some(l) => return Err(ProblemError::Invalid(format!("L override must be positive, got {l}"))),
            None => estimate_lipschitz(
                &problem,
                problem.params.lipschitz_pairs,
                problem.params.lipschitz_radius,
                1.5,
                problem.params.seed,
            ),
        };
        Ok(problem)
    }

    pub fn params(&self) -> &PoisonParams {
        &self.params
    }

    pub fn test_set(&self) -> &Dataset {
        &self.test
    }

    fn n1(&self) -> usize {
        self.poisoned.n()
    }

    fn total(&self) -> usize {
        self.poisoned.n() + self.clean.n()
    }

    /// Component `i` as (data, row, weight, poisoned?).
    fn locate(&self, i: usize) -> (&Dataset, usize, f64) {
        let n = self.total() as f64;
        if i < self.n1() {
            (&self.poisoned, i, n / self.n1() as f64)
        } else {
            (&self.clean, i - self.n1(), n / self.clean.n() as f64)
        }
    }

    /// Margin `(z + x)ᵀθ` of component `i`; clean rows ignore `x`.
    fn margin(&self, i: usize, x: &[f64], theta: &[f64]) -> f64 {
        let (data, row, _) = self.locate(i);
        let base = data.features.row_dot(row, theta);
        if i < self.n1() {
            base + crate::linalg::dot(x, theta)
        } else {
            base
        }
    }

    /// Average training cross-entropy `F(x, θ; D₁) + F(0, θ; D₂)`.
    pub fn training_loss(&self, x: &[f64], theta: &[f64]) -> f64 {
        -self.objective(x, theta)
    }
}

impl MinimaxProblem for PoisonProblem {
    fn name(&self) -> &'static str {
        "poison"
    }

    fn n(&self) -> usize {
        self.total()
    }

    fn set_x(&self) -> &FeasibleSet {
        &self.set_x
    }

    fn set_y(&self) -> &FeasibleSet {
        &self.set_y
    }

    fn objective(&self, x: &[f64], y: &[f64]) -> f64 {
        let n = self.total();
        (0..n).map(|i| self.component_objective(i, x, y)).sum::<f64>() / n as f64
    }

    fn component_objective(&self, i: usize, x: &[f64], y: &[f64]) -> f64 {
        let (data, row, w) = self.locate(i);
        let m = self.margin(i, x, y);
        -w * (softplus(m) - data.labels[row] * m)
    }

    fn accumulate_grad_x(&self, i: usize, x: &[f64], y: &[f64], scale: f64, out: &mut [f64]) {
        if i >= self.n1() {
            return;
        }
        let (data, row, w) = self.locate(i);
        let m = self.margin(i, x, y);
        crate::linalg::axpy(-scale * w * (sigmoid(m) - data.labels[row]), y, out);
    }

    fn accumulate_grad_y(&self, i: usize, x: &[f64], y: &[f64], scale: f64, out: &mut [f64]) {
        let (data, row, w) = self.locate(i);
        let m = self.margin(i, x, y);
        let c = -scale * w * (sigmoid(m) - data.labels[row]);
        data.features.row_axpy(row, c, out);
        if i < self.n1() {
            crate::linalg::axpy(c, x, out);
        }
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    fn test_accuracy(&self, _x: &[f64], y: &[f64]) -> Option<f64> {
        poison_accuracy(y, &self.test).ok()
    }

    fn surrogate_bounds(&self) -> (bool, bool) {
        (false, true)
    }

    fn describe(&self) -> serde_json::Value {
        json!({
            "name": self.name(),
            "n_poisoned": self.n1(),
            "n_clean": self.clean.n(),
            "n_test": self.test.n(),
            "d": self.poisoned.d(),
            "epsilon": self.params.epsilon,
            "theta_bound": self.params.theta_bound,
            "lipschitz": self.lipschitz,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_poison_data, split_poison};
    use crate::linalg;
    use crate::problems::sample_point;
    use crate::problems::fd_relative_error;
    use crate::rng::rng_stream;

    fn instance(seed: u64) -> (PoisonProblem, Vec<f64>) {
        let (ds, theta) = gen_poison_data(seed, 200, 10, 1e-3).unwrap();
        let split = split_poison(&ds, seed, 0.3, 0.1).unwrap();
        (PoisonProblem::new(split, PoisonParams { seed, ..Default::default() }).unwrap(), theta)
    }

    #[test]
    fn accuracy_of_generator_model() {
        let (ds, theta) = gen_poison_data(3, 1000, 100, 1e-3).unwrap();
        assert!(poison_accuracy(&theta, &ds).unwrap() >= 0.95);
        let flipped: Vec<f64> = theta.iter().map(|t| -t).collect();
        assert!(poison_accuracy(&flipped, &ds).unwrap() <= 0.05);
        // θ = 0 predicts class 0 everywhere.
        let zeros = ds.labels.iter().filter(|&&t| t == 0.0).count() as f64 / ds.n() as f64;
        assert_eq!(poison_accuracy(&vec![0.0; 100], &ds).unwrap(), zeros);
    }

    #[test]
    fn accuracy_rejects_mismatched_theta() {
        let (ds, _) = gen_poison_data(3, 10, 4, 0.0).unwrap();
        assert!(poison_accuracy(&[0.0; 3], &ds).is_err());
    }

    #[test]
    fn finite_differences_match() {
        let (p, _) = instance(4);
        let mut rng = rng_stream(12, 12);
        for k in 0..200 {
            let x = sample_point(p.set_x(), 2.0, &mut rng);
            let y = sample_point(p.set_y(), 1.0, &mut rng);
            // Alternate between poisoned and clean components.
            let i = if k % 2 == 0 { k % p.n1() } else { p.n1() + k % (p.n() - p.n1()) };
            assert!(fd_relative_error(&p, i, &x, &y).unwrap() <= 1e-5);
        }
    }

    #[test]
    fn components_average_to_training_loss() {
        let (p, _) = instance(5);
        let x = vec![0.5; 10];
        let theta: Vec<f64> = (0..10).map(|j| 0.1 * j as f64 - 0.4).collect();
        let mut direct = 0.0;
        for r in 0..p.poisoned.n() {
            let z: Vec<f64> = p.poisoned.features.row_dense(r).iter().zip(&x).map(|(a, b)| a + b).collect();
            let m = linalg::dot(&z, &theta);
            direct += (softplus(m) - p.poisoned.labels[r] * m) / p.poisoned.n() as f64;
        }
        for r in 0..p.clean.n() {
            let m = p.clean.features.row_dot(r, &theta);
            direct += (softplus(m) - p.clean.labels[r] * m) / p.clean.n() as f64;
        }
        assert!((p.training_loss(&x, &theta) - direct).abs() < 1e-12);
    }

    #[test]
    fn concave_in_theta_and_sampled_lipschitz_is_conservative() {
        let (p, _) = instance(6);
        let mut rng = rng_stream(13, 13);
        for _ in 0..200 {
            let x = sample_point(p.set_x(), 2.0, &mut rng);
            let y1 = sample_point(p.set_y(), 1.0, &mut rng);
            let y2 = sample_point(p.set_y(), 1.0, &mut rng);
            let mid: Vec<f64> = y1.iter().zip(&y2).map(|(a, b)| 0.5 * (a + b)).collect();
            assert!(p.objective(&x, &mid) >= 0.5 * (p.objective(&x, &y1) + p.objective(&x, &y2)) - 1e-9);
        }
        // Fresh pairs in the sampling region stay below the inflated estimate.
        let mut worst = 0.0_f64;
        for _ in 0..1000 {
            let x1 = sample_point(p.set_x(), 1.0, &mut rng);
            let x2 = sample_point(p.set_x(), 1.0, &mut rng);
            let y1 = sample_point(p.set_y(), 1.0, &mut rng);
            let y2 = sample_point(p.set_y(), 1.0, &mut rng);
            let gx = linalg::dist(&p.grad_x(&x1, &y1), &p.grad_x(&x2, &y2));
            let gy = linalg::dist(&p.grad_y(&x1, &y1), &p.grad_y(&x2, &y2));
            worst = worst.max(gx.max(gy) / (linalg::dist(&x1, &x2) + linalg::dist(&y1, &y2)));
        }
        assert!(worst <= p.lipschitz());
    }
}
