//! Step-size calculators, analysis constants and potential diagnostics.

mod checks;
mod inner;

pub use checks::{
    check_descent, check_pvr_recursions, check_zerosarah_recursions, DescentProbe, DescentReport,
    InequalityCheck,
};
pub use inner::{game_stationarity, game_stationarity_with, potential_value, InnerOracles, PotentialTerms};

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TheoryError {
    #[error("r = {r} outside [2L, 4L] = [{lo}, {hi}]")]
    SmoothingOutOfRange { r: f64, lo: f64, hi: f64 },
    #[error("p = {0} outside (0, 1]")]
    Probability(f64),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("inner solver did not reach tolerance {tol} within {iterations} iterations")]
    NoConvergence { tol: f64, iterations: usize },
    #[error("need at least {need} replicas, got {got}")]
    Replicas { need: usize, got: usize },
}

/// Scheme-specific constants.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum SchemeConstants {
    Pvr {
        p: f64,
    },
    ZeroSarah {
        a: f64,
        b: usize,
        lambda: f64,
        tau: f64,
        b_plus: f64,
        beta: f64,
        zeta: f64,
        xi: f64,
    },
}

/// Every analysis constant the calculators and diagnostics use.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoryConstants {
    pub l: f64,
    pub r: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub l_d: f64,
    pub omega: f64,
    pub gamma: f64,
    pub kappa: f64,
    pub diameter_y: f64,
    pub scheme: SchemeConstants,
}

/// Upper bounds on `(η_x, η_y, ρ)` together with the constants behind them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepSizeBounds {
    pub eta_x: f64,
    pub eta_y: f64,
    pub rho: f64,
    pub constants: TheoryConstants,
    pub warnings: Vec<String>,
}

pub fn sigma1(l: f64, r: f64) -> f64 {
    r / (r - l)
}

pub fn sigma2(l: f64, r: f64) -> f64 {
    (2.0 * r - l) / (r - l)
}

pub fn omega(l: f64, r: f64, eta_x: f64) -> f64 {
    (eta_x * l + eta_x * r + 1.0) / (eta_x * (r - l))
}

pub fn kappa(l: f64, r: f64, eta_y: f64, diameter_y: f64) -> f64 {
    (1.0 + eta_y * l * sigma2(l, r) + eta_y * l) / (eta_y * (r - l)) * diameter_y
}

fn clamp_l(l: f64, warnings: &mut Vec<String>) -> Result<f64, TheoryError> {
    if !(l > 0.0 && l.is_finite()) {
        return Err(TheoryError::Invalid(format!("L must be positive and finite, got {l}")));
    }
    if l < 1.0 {
        let msg = format!("L = {l} < 1 raised to 1");
        log::warn!("{msg}");
        warnings.push(msg);
        Ok(1.0)
    } else {
        Ok(l)
    }
}

fn check_r(l: f64, r: f64) -> Result<(), TheoryError> {
    // Relative slack so that r = 2L computed in floating point is accepted.
    let lo = 2.0 * l;
    let hi = 4.0 * l;
    if !(r >= lo * (1.0 - 1e-12) && r <= hi * (1.0 + 1e-12)) {
        return Err(TheoryError::SmoothingOutOfRange { r, lo, hi });
    }
    Ok(())
}

fn check_diameter(d: f64) -> Result<(), TheoryError> {
    if !(d > 0.0 && d.is_finite()) {
        return Err(TheoryError::Invalid(format!("diameter must be positive and finite, got {d}")));
    }
    Ok(())
}

/// Bounds for the probabilistic variance-reduced scheme.
///
/// `η_x` is fixed first, then `ω(η_x)` and finally `η_y`, which is the only
/// bound that depends on `ω`.
pub fn pvr_step_sizes(l: f64, p: f64, r: f64, diameter_y: f64) -> Result<StepSizeBounds, TheoryError> {
    let mut warnings = Vec::new();
    let l = clamp_l(l, &mut warnings)?;
    if !(p > 0.0 && p <= 1.0) {
        return Err(TheoryError::Probability(p));
    }
    check_r(l, r)?;
    check_diameter(diameter_y)?;
    let gamma = 4.0 + 2.0 / l;
    let l2 = l * l;
    let eta_x = p / (p * (1.0 + 24.0 * l + 2.0 * l2) + 80.0 * l2 * gamma);
    let om = omega(l, r, eta_x);
    let eta_y = (p / (2.0 * p * (1.0 + 9.0 * l) + 10.0 * gamma * l2)).min(1.0 / (2.0 * l * (1.0 + om).powi(2)));
    let rho = 4.0 * p / (1200.0 * p + 9.0 * r * gamma);
    debug_assert!(eta_y <= 1.0 / (2.0 * l * (1.0 + omega(l, r, eta_x)).powi(2)));
    Ok(StepSizeBounds {
        eta_x,
        eta_y,
        rho,
        constants: TheoryConstants {
            l,
            r,
            sigma1: sigma1(l, r),
            sigma2: sigma2(l, r),
            l_d: l + l * sigma2(l, r),
            omega: om,
            gamma,
            kappa: kappa(l, r, eta_y, diameter_y),
            diameter_y,
            scheme: SchemeConstants::Pvr { p },
        },
        warnings,
    })
}

/// `b = ⌈a√n⌉` clamped to `n`.
pub fn zerosarah_batch(n: usize, a: f64) -> (usize, bool) {
    let raw = (a * (n as f64).sqrt() - 1e-9).ceil().max(1.0) as usize;
    if raw > n {
        (n, true)
    } else {
        (raw, false)
    }
}

/// Bounds for the ZeroSARAH scheme.
pub fn zerosarah_step_sizes(l: f64, n: usize, a: f64, r: f64, diameter_y: f64) -> Result<StepSizeBounds, TheoryError> {
    let mut warnings = Vec::new();
    let l = clamp_l(l, &mut warnings)?;
    if n == 0 {
        return Err(TheoryError::Invalid("n must be positive".into()));
    }
    if !(a >= 2.0) {
        return Err(TheoryError::Invalid(format!("a = {a} must be at least 2")));
    }
    check_r(l, r)?;
    check_diameter(diameter_y)?;
    let (b, clamped) = zerosarah_batch(n, a);
    if clamped {
        let msg = format!("a√n exceeds n = {n}; batch clamped to the full sample");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let bf = b as f64;
    let lambda = 1.0 / bf;
    let gamma = 2.0 / lambda + 2.0 / (5.0 * lambda * l);
    let tau = 2.0 * gamma * lambda * lambda;
    let b_plus = 1.0 + bf;
    let l2 = l * l;
    let eta_x = bf / (bf * (1.0 + 24.0 * l + 2.0 * l2) + 310.0 * l2 * gamma + 160.0 * bf * tau * l2 * b_plus);
    let om = omega(l, r, eta_x);
    let eta_y = (bf / (bf * (2.0 + 18.0 * l + 20.0 * tau * l2 * b_plus) + 40.0 * gamma * l2))
        .min(1.0 / (4.0 * l * (1.0 + om).powi(2)));
    let rho = 4.0 * bf / (1200.0 * bf + 36.0 * r * gamma + 18.0 * bf * tau * r * b_plus);
    let beta = 1.0 / bf;
    let frac = 1.0 - bf / n as f64;
    Ok(StepSizeBounds {
        eta_x,
        eta_y,
        rho,
        constants: TheoryConstants {
            l,
            r,
            sigma1: sigma1(l, r),
            sigma2: sigma2(l, r),
            l_d: l + l * sigma2(l, r),
            omega: om,
            gamma,
            kappa: kappa(l, r, eta_y, diameter_y),
            diameter_y,
            scheme: SchemeConstants::ZeroSarah {
                a,
                b,
                lambda,
                tau,
                b_plus,
                beta,
                zeta: frac * (1.0 + beta),
                xi: frac * (1.0 + 1.0 / beta),
            },
        },
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pvr_hand_values() {
        let s = pvr_step_sizes(1.0, 0.5, 2.0, 2f64.sqrt()).unwrap();
        assert_eq!(s.constants.gamma, 6.0);
        assert!((s.eta_x - 0.5 / 493.5).abs() < 1e-18);
        assert!((s.eta_x - 1.0132e-3).abs() < 1e-7);
        let s = pvr_step_sizes(1.0, 1.0, 2.0, 2f64.sqrt()).unwrap();
        assert!((s.rho - 4.0 / 1308.0).abs() < 1e-18);
        assert!((s.rho - 3.058e-3).abs() < 1e-6);
    }

    #[test]
    fn pvr_p_one_is_largest() {
        let full = pvr_step_sizes(2.0, 1.0, 5.0, 1.0).unwrap();
        for p in [0.01, 0.1, 0.5, 0.9] {
            let s = pvr_step_sizes(2.0, p, 5.0, 1.0).unwrap();
            assert!(s.eta_x <= full.eta_x && s.eta_y <= full.eta_y && s.rho <= full.rho);
        }
    }

    #[test]
    fn zerosarah_hand_values() {
        let s = zerosarah_step_sizes(1.0, 10_000, 2.0, 2.0, 2f64.sqrt()).unwrap();
        match s.constants.scheme {
            SchemeConstants::ZeroSarah { b, lambda, tau, .. } => {
                assert_eq!(b, 200);
                assert_eq!(lambda, 0.005);
                assert!((tau - 0.024).abs() < 1e-15);
            }
            _ => unreachable!(),
        }
        assert!((s.constants.gamma - 480.0).abs() < 1e-10);
    }

    #[test]
    fn zerosarah_clamps_small_n() {
        let s = zerosarah_step_sizes(1.0, 4, 2.0, 2.0, 1.0).unwrap();
        match s.constants.scheme {
            SchemeConstants::ZeroSarah { b, lambda, .. } => {
                assert_eq!(b, 4);
                assert_eq!(lambda, 0.25);
            }
            _ => unreachable!(),
        }
        // a√n = n exactly is not a clamp.
        assert!(s.warnings.is_empty());
        let s = zerosarah_step_sizes(1.0, 3, 2.0, 2.0, 1.0).unwrap();
        assert_eq!(s.warnings.len(), 1);
        assert_eq!(zerosarah_batch(3, 2.0), (3, true));
    }

    #[test]
    fn zerosarah_batch_doubling() {
        // n = 100 with a = 2 and a = 4 gives b = 20 and b = 40.
        let one = zerosarah_step_sizes(1.0, 100, 2.0, 2.0, 1.0).unwrap();
        let two = zerosarah_step_sizes(1.0, 100, 4.0, 2.0, 1.0).unwrap();
        let tau = |s: &StepSizeBounds| match s.constants.scheme {
            SchemeConstants::ZeroSarah { lambda, tau, .. } => (lambda, tau),
            _ => unreachable!(),
        };
        let (l1, t1) = tau(&one);
        let (l2, t2) = tau(&two);
        assert!((l2 - l1 / 2.0).abs() < 1e-15);
        assert!((two.constants.gamma - 2.0 * one.constants.gamma).abs() < 1e-9);
        assert!((t2 - t1 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn small_l_is_raised_and_r_range_enforced() {
        let s = pvr_step_sizes(0.3, 0.5, 2.0, 1.0).unwrap();
        assert_eq!(s.constants.l, 1.0);
        assert!(!s.warnings.is_empty());
        assert!(matches!(pvr_step_sizes(1.0, 0.5, 1.5, 1.0), Err(TheoryError::SmoothingOutOfRange { .. })));
        assert!(matches!(zerosarah_step_sizes(1.0, 100, 2.0, 4.5, 1.0), Err(TheoryError::SmoothingOutOfRange { .. })));
        assert_eq!(pvr_step_sizes(1.0, 0.0, 2.0, 1.0), Err(TheoryError::Probability(0.0)));
        assert!(zerosarah_step_sizes(1.0, 100, 1.5, 2.0, 1.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn pvr_bounds_positive_and_consistent(l in 1.0f64..50.0, p in 0.001f64..1.0, t in 0.0f64..1.0) {
            let r = l * (2.0 + 2.0 * t);
            let s = pvr_step_sizes(l, p, r, 2f64.sqrt()).unwrap();
            prop_assert!(s.eta_x > 0.0 && s.eta_y > 0.0 && s.rho > 0.0);
            prop_assert!(s.constants.sigma1 <= 2.0 + 1e-12 && s.constants.sigma2 <= 3.0 + 1e-12);
            let om = omega(l, r, s.eta_x);
            prop_assert!(s.eta_y <= 1.0 / (2.0 * l * (1.0 + om).powi(2)));
        }

        #[test]
        fn zerosarah_bounds_positive_and_consistent(l in 1.0f64..50.0, n in 1usize..100_000, a in 2.0f64..10.0, t in 0.0f64..1.0) {
            let r = l * (2.0 + 2.0 * t);
            let s = zerosarah_step_sizes(l, n, a, r, 2f64.sqrt()).unwrap();
            prop_assert!(s.eta_x > 0.0 && s.eta_y > 0.0 && s.rho > 0.0);
            prop_assert!(s.constants.sigma1 <= 2.0 + 1e-12 && s.constants.sigma2 <= 3.0 + 1e-12);
            let om = omega(l, r, s.eta_x);
            prop_assert!(s.eta_y <= 1.0 / (4.0 * l * (1.0 + om).powi(2)));
        }
    }
}
