//! Verification suites run from the command line, reported as JSON.

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::HarnessError;
use crate::estimators::ZeroSarahInit;
use crate::problems::{MinimaxProblem, ToyBilinearProblem, ToySpec};
use crate::rng::rng_stream;
use crate::sets::FeasibleSet;
use crate::solvers::{Scheme, Solver, SolverConfig};
use crate::theory::{self, SchemeConstants};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Estimators,
    Descent,
    Projections,
}

impl std::str::FromStr for Suite {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "estimators" => Ok(Suite::Estimators),
            "descent" => Ok(Suite::Descent),
            "projections" => Ok(Suite::Projections),
            other => Err(format!("unknown suite {other:?}; expected estimators, descent or projections")),
        }
    }
}

/// Sizes of the Monte-Carlo work in each suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteOptions {
    /// Estimator draws per recursion state.
    pub draws: usize,
    /// Replicas per descent probe.
    pub replicas: usize,
    /// Random inputs per dimension for projections.
    pub inputs: usize,
    pub seed: u64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions { draws: 100_000, replicas: 100, inputs: 1000, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteItem {
    pub name: String,
    pub passed: bool,
    pub detail: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub options: SuiteOptions,
    pub items: Vec<SuiteItem>,
    pub passed: bool,
}

/// Iterations at which the recursion suite freezes its states.
pub const RECURSION_STATES: [usize; 5] = [1, 4, 9, 16, 25];

pub fn run_suite(suite: Suite, options: &SuiteOptions) -> Result<SuiteReport, HarnessError> {
    let items = match suite {
        Suite::Estimators => estimator_items(options)?,
        Suite::Descent => descent_items(options)?,
        Suite::Projections => projection_items(options)?,
    };
    let passed = items.iter().all(|i| i.passed);
    Ok(SuiteReport { suite, options: options.clone(), items, passed })
}

fn theory_err(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Config(e.to_string())
}

fn estimator_items(o: &SuiteOptions) -> Result<Vec<SuiteItem>, HarnessError> {
    let p = ToyBilinearProblem::random(&ToySpec { box_bound: 5.0, ..Default::default() })?;
    let r = 2.0 * p.lipschitz();
    let schemes = [
        Scheme::Pvr { p: 0.3, batch: 2 },
        Scheme::ZeroSarah { batch: 5, lambda: None, init: ZeroSarahInit::WarmStart },
    ];
    let mut items = Vec::new();
    for scheme in schemes {
        let mut s = Solver::new(&p, SolverConfig::new(0.05, 0.05, 0.05, r, scheme.clone(), 0))?;
        for (k, &t) in RECURSION_STATES.iter().enumerate() {
            while s.t() < t {
                s.step()?;
            }
            let seed = o.seed.wrapping_add(k as u64);
            let checks = match scheme {
                Scheme::Pvr { .. } => theory::check_pvr_recursions(&s, o.draws, seed),
                _ => theory::check_zerosarah_recursions(&s, o.draws, seed),
            }?;
            for c in checks {
                items.push(SuiteItem {
                    name: format!("{}@t{}", c.name, c.t),
                    passed: c.holds,
                    detail: serde_json::to_value(&c).expect("serializable"),
                });
            }
        }
    }
    Ok(items)
}

/// Probed iterations of the descent suite.
pub const DESCENT_PROBES: [usize; 10] = [0, 100, 200, 300, 400, 500, 600, 700, 800, 900];

fn descent_items(o: &SuiteOptions) -> Result<Vec<SuiteItem>, HarnessError> {
    let p = ToyBilinearProblem::random(&ToySpec::default())?;
    let l = p.lipschitz();
    let r = 2.0 * l.max(1.0);
    let dy = p.set_y().diameter();
    let pvr = theory::pvr_step_sizes(l, 0.5, r, dy)?;
    let zs = theory::zerosarah_step_sizes(l, p.n(), 2.0, r, dy)?;
    let SchemeConstants::ZeroSarah { b, .. } = zs.constants.scheme else {
        return Err(theory_err("ZeroSARAH bounds without a batch size"));
    };
    let runs = [
        (pvr, Scheme::Pvr { p: 0.5, batch: 1 }),
        (zs, Scheme::ZeroSarah { batch: b, lambda: None, init: ZeroSarahInit::WarmStart }),
    ];
    let mut items = Vec::new();
    for (bounds, scheme) in runs {
        let s = Solver::new(&p, SolverConfig::new(bounds.eta_x, bounds.eta_y, bounds.rho, r, scheme, 0))?;
        let rep = theory::check_descent(&s, &bounds.constants, &DESCENT_PROBES, o.replicas, o.seed, 1e-11)?;
        let need = (rep.probes.len() * 9).div_ceil(10);
        items.push(SuiteItem {
            name: format!("descent_{}", rep.scheme),
            passed: rep.satisfied >= need,
            detail: serde_json::to_value(&rep).expect("serializable"),
        });
    }
    Ok(items)
}

/// Euclidean projection onto the probability simplex by enumerating every
/// support: on a support `S` the nearest point of `{Σ_S x = 1}` is a shift
/// of `u_S`, and the projection is the nearest feasible such candidate.
/// Exponential in the dimension; meant for checking small cases.
pub fn brute_force_simplex_projection(u: &[f64]) -> Vec<f64> {
    let d = u.len();
    assert!((1..=20).contains(&d), "brute force is limited to 1..=20 coordinates");
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1 << d) {
        let k = mask.count_ones() as f64;
        let sum: f64 = (0..d).filter(|i| mask >> i & 1 == 1).map(|i| u[i]).sum();
        let shift = (sum - 1.0) / k;
        let x: Vec<f64> = (0..d).map(|i| if mask >> i & 1 == 1 { u[i] - shift } else { 0.0 }).collect();
        if x.iter().any(|&v| v < 0.0) {
            continue;
        }
        let dist: f64 = x.iter().zip(u).map(|(a, b)| (a - b).powi(2)).sum();
        if best.as_ref().is_none_or(|(d0, _)| dist < *d0) {
            best = Some((dist, x));
        }
    }
    best.expect("the full support with clamped values is always a candidate").1
}

fn projection_items(o: &SuiteOptions) -> Result<Vec<SuiteItem>, HarnessError> {
    let mut rng = rng_stream(o.seed, 0x5e7);
    let mut items = Vec::new();
    for d in 2..=6 {
        let simplex = FeasibleSet::simplex(d)?;
        let mut max_err = 0.0f64;
        for _ in 0..o.inputs {
            let u: Vec<f64> = (0..d).map(|_| 3.0 * rng.standard_normal()).collect();
            let fast = simplex.project(&u)?;
            let slow = brute_force_simplex_projection(&u);
            let err = fast.iter().zip(&slow).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            max_err = max_err.max(err);
        }
        items.push(SuiteItem {
            name: format!("simplex_d{d}"),
            passed: max_err <= 1e-9,
            detail: json!({ "inputs": o.inputs, "max_abs_error": max_err, "tolerance": 1e-9 }),
        });
    }
    // Box and ∞-ball: projections are feasible and idempotent.
    let sets = [
        ("box", FeasibleSet::new_box(vec![-1.0, 0.0, 2.0], vec![1.0, 0.5, 2.0])?),
        ("inf_ball", FeasibleSet::inf_ball(vec![0.5, -0.5, 0.0], 0.25)?),
    ];
    for (name, set) in sets {
        let mut ok = true;
        for _ in 0..o.inputs {
            let u: Vec<f64> = (0..3).map(|_| 3.0 * rng.standard_normal()).collect();
            let x = set.project(&u)?;
            ok &= set.contains(&x, 0.0) && set.project(&x)? == x;
        }
        items.push(SuiteItem { name: name.into(), passed: ok, detail: json!({ "inputs": o.inputs }) });
    }
    Ok(items)
}
