//! Single-loop smoothed GDA driven by any of the estimators, plus the two
//! baselines.
//!
//! One iteration of the smoothed schemes is
//! `x ← P_X(x − η_x v)`, `y ← P_Y(y + η_y w)`, `z ← z + ρ(x_new − z)`.
//! StocGDA takes the same projected step on `f` itself (no `z`), and
//! VR-AGDA alternates: `x` first, then `y` at the fresh `x`.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimators::{
    minibatch_update, BatchCoupling, EstimatorError, Point, PvrEstimator, RegularizedOracle, SvrgEstimator,
    ZeroSarahEstimator, ZeroSarahInit,
};
use crate::linalg;
use crate::problems::MinimaxProblem;
use crate::rng::{rng_stream, RngStream};
use crate::sets::SetError;
use crate::theory::{self, InnerOracles, TheoryConstants, TheoryError};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid solver config: {0}")]
    Config(String),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Set(#[from] SetError),
    #[error(transparent)]
    Theory(#[from] TheoryError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scheme {
    /// Full gradient with probability `p`, otherwise a recursive update on
    /// a batch of size `batch`.
    Pvr {
        p: f64,
        #[serde(default = "one")]
        batch: usize,
    },
    ZeroSarah {
        batch: usize,
        /// Defaults to `1/batch`.
        #[serde(default)]
        lambda: Option<f64>,
        #[serde(default)]
        init: ZeroSarahInit,
    },
    StocGda {
        batch: usize,
    },
    VrAgda {
        batch: usize,
        /// Defaults to `max(1, n / batch)`.
        #[serde(default)]
        snapshot_period: Option<usize>,
    },
}

fn one() -> usize {
    1
}

impl Scheme {
    pub fn label(&self) -> &'static str {
        match self {
            Scheme::Pvr { .. } => "pvr_sgda",
            Scheme::ZeroSarah { .. } => "zerosarah_sgda",
            Scheme::StocGda { .. } => "stocgda",
            Scheme::VrAgda { .. } => "vr_agda",
        }
    }

    /// Whether the scheme runs on the regularized function with a moving
    /// proximal center.
    pub fn is_smoothed(&self) -> bool {
        matches!(self, Scheme::Pvr { .. } | Scheme::ZeroSarah { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Diagnostics {
    /// Step used in the projected residuals; defaults to `1/L`.
    pub residual_eta: Option<f64>,
    /// Record `‖∇K_t − v_t‖` and `‖∇_y K_t − w_t‖`.
    pub estimator_error: bool,
    /// Record the potential (small problems only).
    pub potential: bool,
    pub potential_tol: f64,
    /// Keep every iterate `(x_t, y_t, z_t)`.
    pub record_trajectory: bool,
}

impl Default for Diagnostics {
    fn default() -> Self {
        Diagnostics {
            residual_eta: None,
            estimator_error: false,
            potential: false,
            potential_tol: 1e-10,
            record_trajectory: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub eta_x: f64,
    pub eta_y: f64,
    pub rho: f64,
    pub r: f64,
    pub scheme: Scheme,
    pub iterations: usize,
    #[serde(default)]
    pub seed: u64,
    /// RNG stream id; the harness assigns one per run.
    #[serde(default)]
    pub stream: u64,
    #[serde(default = "one")]
    pub trace_every: usize,
    #[serde(default)]
    pub coupling: BatchCoupling,
    #[serde(default)]
    pub diagnostics: Diagnostics,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub y0: Option<Vec<f64>>,
    /// Stop before the first iteration that starts with at least this many
    /// oracle units spent; `iterations` stays the cap.
    #[serde(default)]
    pub oracle_budget: Option<u64>,
}

impl SolverConfig {
    pub fn new(eta_x: f64, eta_y: f64, rho: f64, r: f64, scheme: Scheme, iterations: usize) -> Self {
        SolverConfig {
            eta_x,
            eta_y,
            rho,
            r,
            scheme,
            iterations,
            seed: 0,
            stream: 0,
            trace_every: 1,
            coupling: BatchCoupling::Coupled,
            diagnostics: Diagnostics::default(),
            x0: None,
            y0: None,
            oracle_budget: None,
        }
    }

    /// Checks every invariant against `problem`.
    pub fn validate(&self, problem: &dyn MinimaxProblem) -> Result<(), SolverError> {
        let bad = |m: String| Err(SolverError::Config(m));
        let n = problem.n();
        if !(self.eta_x > 0.0 && self.eta_y > 0.0) {
            return bad(format!("step sizes must be positive, got η_x = {}, η_y = {}", self.eta_x, self.eta_y));
        }
        if self.trace_every == 0 {
            return bad("trace_every must be at least 1".into());
        }
        if self.scheme.is_smoothed() {
            if !(self.rho > 0.0 && self.rho <= 1.0) {
                return bad(format!("ρ = {} outside (0, 1]", self.rho));
            }
            if !(self.r > problem.lipschitz()) {
                return bad(format!("r = {} must exceed L = {}", self.r, problem.lipschitz()));
            }
        }
        let check_batch = |b: usize| {
            if b == 0 || b > n {
                return Err(SolverError::Config(format!("batch size {b} outside 1..={n}")));
            }
            Ok(())
        };
        match &self.scheme {
            Scheme::Pvr { p, batch } => {
                if !(*p > 0.0 && *p <= 1.0) {
                    return bad(format!("p = {p} outside (0, 1]"));
                }
                check_batch(*batch)?;
            }
            Scheme::ZeroSarah { batch, lambda, .. } => {
                check_batch(*batch)?;
                if let Some(l) = lambda {
                    if !(*l > 0.0 && *l <= 1.0) {
                        return bad(format!("λ = {l} outside (0, 1]"));
                    }
                }
            }
            Scheme::StocGda { batch } => check_batch(*batch)?,
            Scheme::VrAgda { batch, snapshot_period } => {
                check_batch(*batch)?;
                if *snapshot_period == Some(0) {
                    return bad("snapshot period must be at least 1".into());
                }
            }
        }
        if let Some(x0) = &self.x0 {
            if x0.len() != problem.dim_x() || !problem.set_x().contains(x0, 1e-12) {
                return bad("x0 is not a point of X".into());
            }
        }
        if let Some(y0) = &self.y0 {
            if y0.len() != problem.dim_y() || !problem.set_y().contains(y0, 1e-12) {
                return bad("y0 is not a point of Y".into());
            }
        }
        if let Some(eta) = self.diagnostics.residual_eta {
            if !(eta > 0.0) {
                return bad("residual step must be positive".into());
            }
        }
        Ok(())
    }

    /// The smoothing weight actually used: `r` for the smoothed schemes and
    /// zero for the baselines.
    pub fn effective_r(&self) -> f64 {
        if self.scheme.is_smoothed() {
            self.r
        } else {
            0.0
        }
    }

    pub fn lambda(&self) -> Option<f64> {
        match &self.scheme {
            Scheme::ZeroSarah { batch, lambda, .. } => Some(lambda.unwrap_or(1.0 / *batch as f64)),
            _ => None,
        }
    }

    pub fn snapshot_period(&self, n: usize) -> Option<usize> {
        match &self.scheme {
            Scheme::VrAgda { batch, snapshot_period } => Some(snapshot_period.unwrap_or((n / batch).max(1))),
            _ => None,
        }
    }
}

/// Default initial point: `x_0 = P_X(0)`, `y_0` the center of `Y`, `z_0 = x_0`.
pub fn initial_point(problem: &dyn MinimaxProblem, config: &SolverConfig) -> Point {
    let x = config.x0.clone().unwrap_or_else(|| {
        let mut x = vec![0.0; problem.dim_x()];
        problem.set_x().project_unchecked(&mut x);
        x
    });
    let y = config.y0.clone().unwrap_or_else(|| problem.set_y().center());
    Point { z: x.clone(), x, y }
}

#[derive(Debug, Clone)]
enum EstimatorState {
    Pvr(PvrEstimator),
    ZeroSarah(ZeroSarahEstimator),
    Minibatch { v: Vec<f64>, w: Vec<f64> },
    Svrg {
        est: SvrgEstimator,
        period: usize,
        v: Vec<f64>,
        w: Vec<f64>,
        /// Where `w` was evaluated: `(x_{t+1}, y_t)`.
        y_point: Option<Point>,
    },
}

/// A resumable solver run. Cloning gives an independent replica of the
/// whole state, estimator included.
#[derive(Clone)]
pub struct Solver<'a> {
    problem: &'a dyn MinimaxProblem,
    config: SolverConfig,
    oracle: RegularizedOracle<'a>,
    rng: RngStream,
    point: Point,
    prev: Option<Point>,
    est: EstimatorState,
    t: usize,
    heads: u64,
    estimated: bool,
    warned: (bool, bool),
    warnings: Vec<String>,
}

impl<'a> Solver<'a> {
    pub fn new(problem: &'a dyn MinimaxProblem, config: SolverConfig) -> Result<Self, SolverError> {
        config.validate(problem)?;
        let mut oracle = RegularizedOracle::new(problem, config.effective_r());
        let point = initial_point(problem, &config);
        let est = match &config.scheme {
            Scheme::Pvr { .. } => EstimatorState::Pvr(PvrEstimator::new()),
            Scheme::ZeroSarah { init, .. } => EstimatorState::ZeroSarah(ZeroSarahEstimator::new(
                &mut oracle,
                config.lambda().expect("ZeroSARAH has λ"),
                *init,
                &point,
            )),
            Scheme::StocGda { .. } => EstimatorState::Minibatch { v: Vec::new(), w: Vec::new() },
            Scheme::VrAgda { .. } => EstimatorState::Svrg {
                est: SvrgEstimator::new(&mut oracle, &point),
                period: config.snapshot_period(problem.n()).expect("VR-AGDA has a period"),
                v: Vec::new(),
                w: Vec::new(),
                y_point: None,
            },
        };
        let rng = rng_stream(config.seed, config.stream);
        Ok(Solver {
            problem,
            config,
            oracle,
            rng,
            point,
            prev: None,
            est,
            t: 0,
            heads: 0,
            estimated: false,
            warned: (false, false),
            warnings: Vec::new(),
        })
    }

    pub fn problem(&self) -> &'a dyn MinimaxProblem {
        self.problem
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn point(&self) -> &Point {
        &self.point
    }

    pub fn previous(&self) -> Option<&Point> {
        self.prev.as_ref()
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn oracle(&self) -> &RegularizedOracle<'a> {
        &self.oracle
    }

    pub fn oracle_calls(&self) -> u64 {
        self.oracle.calls()
    }

    /// Number of full-gradient branches taken (PVR only).
    pub fn heads(&self) -> u64 {
        self.heads
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Replaces the random stream, e.g. to fan out replicas from one state.
    pub fn reseed(&mut self, rng: RngStream) {
        self.rng = rng;
    }

    /// Whether the estimate for the current iterate has been formed.
    pub fn is_estimated(&self) -> bool {
        self.estimated
    }

    /// The current estimates `(v_t, w_t)`, if formed.
    pub fn estimates(&self) -> Option<(&[f64], &[f64])> {
        if !self.estimated {
            return None;
        }
        Some(match &self.est {
            EstimatorState::Pvr(e) => (&e.v, &e.w),
            EstimatorState::ZeroSarah(e) => (&e.v, &e.w),
            EstimatorState::Minibatch { v, w } | EstimatorState::Svrg { v, w, .. } => (v, w),
        })
    }

    pub fn zerosarah(&self) -> Option<&ZeroSarahEstimator> {
        match &self.est {
            EstimatorState::ZeroSarah(e) => Some(e),
            _ => None,
        }
    }

    fn draw_batches(&mut self, b: usize) -> (Vec<usize>, Vec<usize>) {
        let n = self.problem.n();
        let bx = self.rng.sample_without_replacement(n, b);
        let by = match self.config.coupling {
            BatchCoupling::Coupled => bx.clone(),
            BatchCoupling::Independent => self.rng.sample_without_replacement(n, b),
        };
        (bx, by)
    }

    /// Forms `(v_t, w_t)` at the current iterate. Not available for the
    /// alternating baseline, whose estimates interleave with its steps.
    pub fn estimate(&mut self) -> Result<(), SolverError> {
        if self.estimated {
            return Ok(());
        }
        match self.config.scheme.clone() {
            Scheme::Pvr { p, batch } => {
                // The first estimate is always a full gradient.
                let coin = self.t == 0 || self.rng.bernoulli(p);
                let (bx, by) = if coin { (Vec::new(), Vec::new()) } else { self.draw_batches(batch) };
                let EstimatorState::Pvr(e) = &mut self.est else { unreachable!() };
                e.update(&mut self.oracle, coin, &bx, &by, &self.point, self.prev.as_ref())?;
                if coin {
                    self.heads += 1;
                }
            }
            Scheme::ZeroSarah { batch, .. } => {
                let (bx, by) = self.draw_batches(batch);
                let EstimatorState::ZeroSarah(e) = &mut self.est else { unreachable!() };
                e.update(&mut self.oracle, &bx, &by, &self.point, self.prev.as_ref())?;
            }
            Scheme::StocGda { batch } => {
                let (bx, by) = self.draw_batches(batch);
                let (nv, nw) = minibatch_update(&mut self.oracle, &bx, &by, &self.point)?;
                let EstimatorState::Minibatch { v, w } = &mut self.est else { unreachable!() };
                *v = nv;
                *w = nw;
            }
            Scheme::VrAgda { .. } => {
                return Err(SolverError::Config("the alternating baseline has no separate estimate phase".into()));
            }
        }
        self.estimated = true;
        Ok(())
    }

    /// Takes the step with the formed estimates and advances `t`.
    pub fn apply_step(&mut self) -> Result<(), SolverError> {
        if !self.estimated {
            self.estimate()?;
        }
        let (v, w) = self.estimates().expect("estimated");
        let (v, w) = (v.to_vec(), w.to_vec());
        let c = &self.config;
        let mut x: Vec<f64> = self.point.x.iter().zip(&v).map(|(a, g)| a - c.eta_x * g).collect();
        self.problem.set_x().project_unchecked(&mut x);
        let mut y: Vec<f64> = self.point.y.iter().zip(&w).map(|(a, g)| a + c.eta_y * g).collect();
        self.problem.set_y().project_unchecked(&mut y);
        let z = if c.scheme.is_smoothed() {
            self.point.z.iter().zip(&x).map(|(zi, xi)| zi + c.rho * (xi - zi)).collect()
        } else {
            x.clone()
        };
        self.advance(Point { x, y, z });
        Ok(())
    }

    fn advance(&mut self, next: Point) {
        let old = std::mem::replace(&mut self.point, next);
        self.prev = Some(old);
        self.t += 1;
        self.estimated = false;
        self.check_surrogates();
    }

    fn check_surrogates(&mut self) {
        let (sx, sy) = self.problem.surrogate_bounds();
        if sx && !self.warned.0 && self.problem.set_x().touches_boundary(&self.point.x) {
            let msg = format!("t = {}: x reached the surrogate bound of X", self.t);
            log::warn!("{msg}");
            self.warnings.push(msg);
            self.warned.0 = true;
        }
        if sy && !self.warned.1 && self.problem.set_y().touches_boundary(&self.point.y) {
            let msg = format!("t = {}: y reached the surrogate bound of Y", self.t);
            log::warn!("{msg}");
            self.warnings.push(msg);
            self.warned.1 = true;
        }
    }

    fn agda_step(&mut self) -> Result<(), SolverError> {
        let Scheme::VrAgda { batch, .. } = self.config.scheme else { unreachable!() };
        let (eta_x, eta_y) = (self.config.eta_x, self.config.eta_y);
        let (bx, by) = self.draw_batches(batch);
        let t = self.t;
        let EstimatorState::Svrg { est, period, v, w, y_point } = &mut self.est else { unreachable!() };
        if t > 0 && t % *period == 0 {
            est.refresh(&mut self.oracle, &self.point);
        }
        *v = est.estimate_x(&mut self.oracle, &bx, &self.point)?;
        let mut x: Vec<f64> = self.point.x.iter().zip(v.iter()).map(|(a, g)| a - eta_x * g).collect();
        self.problem.set_x().project_unchecked(&mut x);
        let mid = Point { x: x.clone(), y: self.point.y.clone(), z: x.clone() };
        *w = est.estimate_y(&mut self.oracle, &by, &mid)?;
        let mut y: Vec<f64> = self.point.y.iter().zip(w.iter()).map(|(a, g)| a + eta_y * g).collect();
        self.problem.set_y().project_unchecked(&mut y);
        *y_point = Some(mid);
        self.advance(Point { z: x.clone(), x, y });
        Ok(())
    }

    /// One full iteration.
    pub fn step(&mut self) -> Result<(), SolverError> {
        match self.config.scheme {
            Scheme::VrAgda { .. } => self.agda_step(),
            _ => {
                self.estimate()?;
                self.apply_step()
            }
        }
    }

    /// `(‖∇_x K_t − v_t‖, ‖∇_y K_t − w_t‖)` for the formed estimates, or for
    /// the alternating baseline the errors of its last step.
    fn estimator_errors(&self) -> Option<(f64, f64)> {
        let o = &self.oracle;
        match &self.est {
            EstimatorState::Svrg { v, w, y_point: Some(mid), .. } => {
                let prev = self.prev.as_ref()?;
                let gx = o.exact_grad_x(&prev.x, &prev.z, &prev.y);
                let gy = o.exact_grad_y(&mid.x, &mid.y);
                Some((linalg::dist(&gx, v), linalg::dist(&gy, w)))
            }
            EstimatorState::Svrg { .. } => None,
            _ => {
                let (v, w) = self.estimates()?;
                let p = &self.point;
                let gx = o.exact_grad_x(&p.x, &p.z, &p.y);
                let gy = o.exact_grad_y(&p.x, &p.y);
                Some((linalg::dist(&gx, v), linalg::dist(&gy, w)))
            }
        }
    }
}

/// One row of telemetry. The record at `t` describes `(x_t, y_t, z_t)`;
/// `oracle_count` is the count spent before iteration `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    pub oracle_count: u64,
    pub diag_oracle_count: u64,
    pub primal: Option<f64>,
    pub res_x: f64,
    pub res_y: f64,
    pub err_x: Option<f64>,
    pub err_y: Option<f64>,
    pub phi: Option<f64>,
    pub wall_s: Option<f64>,
    pub accuracy: Option<f64>,
}

impl TraceRecord {
    pub fn residual(&self) -> f64 {
        self.res_x.max(self.res_y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BestIterate {
    pub t: usize,
    pub residual: f64,
    pub point: Point,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub trace: Vec<TraceRecord>,
    pub final_point: Point,
    pub best: BestIterate,
    pub trajectory: Option<Vec<Point>>,
    pub oracle_count: u64,
    pub diag_oracle_count: u64,
    pub heads: u64,
    pub warnings: Vec<String>,
    pub initial_point: Point,
}

/// Analysis constants matching `config`, for the potential diagnostics.
pub fn constants_for(problem: &dyn MinimaxProblem, config: &SolverConfig) -> Option<TheoryConstants> {
    let l = problem.lipschitz().max(1.0);
    let scheme = match &config.scheme {
        Scheme::Pvr { p, .. } => theory::SchemeConstants::Pvr { p: *p },
        Scheme::ZeroSarah { batch, .. } => {
            let b = *batch as f64;
            let lambda = config.lambda()?;
            let gamma = 2.0 / lambda + 2.0 / (5.0 * lambda * l);
            let frac = 1.0 - b / problem.n() as f64;
            theory::SchemeConstants::ZeroSarah {
                a: b / (problem.n() as f64).sqrt(),
                b: *batch,
                lambda,
                tau: 2.0 * gamma * lambda * lambda,
                b_plus: 1.0 + b,
                beta: 1.0 / b,
                zeta: frac * (1.0 + 1.0 / b),
                xi: frac * (1.0 + b),
            }
        }
        _ => return None,
    };
    let r = config.r;
    let gamma = match &scheme {
        theory::SchemeConstants::Pvr { .. } => 4.0 + 2.0 / l,
        theory::SchemeConstants::ZeroSarah { lambda, .. } => 2.0 / lambda + 2.0 / (5.0 * lambda * l),
    };
    let diameter_y = problem.set_y().diameter();
    Some(TheoryConstants {
        l,
        r,
        sigma1: theory::sigma1(l, r),
        sigma2: theory::sigma2(l, r),
        l_d: l + l * theory::sigma2(l, r),
        omega: theory::omega(l, r, config.eta_x),
        gamma,
        kappa: theory::kappa(l, r, config.eta_y, diameter_y),
        diameter_y,
        scheme,
    })
}

/// Runs `config` on `problem` to completion.
pub fn run(problem: &dyn MinimaxProblem, config: &SolverConfig) -> Result<RunResult, SolverError> {
    let start = Instant::now();
    let mut solver = Solver::new(problem, config.clone())?;
    let diag = &config.diagnostics;
    let eta_res = diag.residual_eta.unwrap_or(1.0 / problem.lipschitz());
    let n = problem.n() as u64;
    let constants = if diag.potential { constants_for(problem, config) } else { None };
    let inner = if constants.is_some() {
        Some(InnerOracles::new(problem, config.r, diag.potential_tol)?)
    } else {
        None
    };
    let initial = solver.point().clone();
    let mut diag_count = 0u64;
    let mut trace = Vec::new();
    let mut trajectory = diag.record_trajectory.then(|| vec![initial.clone()]);
    let mut best: Option<BestIterate> = None;
    let is_agda = matches!(config.scheme, Scheme::VrAgda { .. });
    let big_t = config.iterations;

    let base_record = |solver: &Solver<'_>, diag_count: &mut u64| -> Result<TraceRecord, SolverError> {
        let p = solver.point();
        let (res_x, res_y) = theory::game_stationarity(problem, &p.x, &p.y, eta_res)?;
        *diag_count += 2 * n;
        Ok(TraceRecord {
            t: solver.t(),
            oracle_count: solver.oracle_calls(),
            diag_oracle_count: 0,
            primal: problem.closed_form_primal(&p.x),
            res_x,
            res_y,
            err_x: None,
            err_y: None,
            phi: None,
            wall_s: None,
            accuracy: problem.test_accuracy(&p.x, &p.y),
        })
    };
    let update_best = |best: &mut Option<BestIterate>, rec: &TraceRecord, p: &Point| {
        if best.as_ref().is_none_or(|b| rec.residual() < b.residual) {
            *best = Some(BestIterate { t: rec.t, residual: rec.residual(), point: p.clone() });
        }
    };

    for t in 0..big_t {
        if config.oracle_budget.is_some_and(|b| solver.oracle_calls() >= b) {
            break;
        }
        let due = t % config.trace_every == 0;
        let mut rec = if due { Some(base_record(&solver, &mut diag_count)?) } else { None };
        if is_agda {
            let here = solver.point().clone();
            solver.step()?;
            if let Some(r) = rec.as_mut() {
                if diag.estimator_error {
                    if let Some((ex, ey)) = solver.estimator_errors() {
                        r.err_x = Some(ex);
                        r.err_y = Some(ey);
                        diag_count += 2 * n;
                    }
                }
                update_best(&mut best, r, &here);
            }
        } else {
            solver.estimate()?;
            if let Some(r) = rec.as_mut() {
                if diag.estimator_error {
                    if let Some((ex, ey)) = solver.estimator_errors() {
                        r.err_x = Some(ex);
                        r.err_y = Some(ey);
                        diag_count += 2 * n;
                    }
                }
                if let (Some(c), Some(inner)) = (&constants, &inner) {
                    let (v, w) = solver.estimates().expect("estimated");
                    let trackers = solver.zerosarah().map(|z| {
                        diag_count += 2 * n;
                        z.tracker_errors(solver.oracle(), solver.point())
                    });
                    // A failed inner solve leaves the field empty; it never
                    // stops the run.
                    match theory::potential_value(inner, solver.point(), v, w, c, trackers) {
                        Ok(terms) => r.phi = Some(terms.phi),
                        Err(e) => log::warn!("potential at t = {t}: {e}"),
                    }
                }
                update_best(&mut best, r, solver.point());
            }
            solver.apply_step()?;
        }
        if let Some(mut r) = rec {
            r.diag_oracle_count = diag_count + inner.as_ref().map_or(0, |i| i.diag_calls());
            r.wall_s = Some(start.elapsed().as_secs_f64());
            trace.push(r);
        }
        if let Some(tr) = trajectory.as_mut() {
            tr.push(solver.point().clone());
        }
    }
    let mut last = base_record(&solver, &mut diag_count)?;
    last.diag_oracle_count = diag_count + inner.as_ref().map_or(0, |i| i.diag_calls());
    last.wall_s = Some(start.elapsed().as_secs_f64());
    update_best(&mut best, &last, solver.point());
    let diag_total = last.diag_oracle_count;
    trace.push(last);

    Ok(RunResult {
        trace,
        final_point: solver.point().clone(),
        best: best.expect("at least the final record"),
        trajectory,
        oracle_count: solver.oracle_calls(),
        diag_oracle_count: diag_total,
        heads: solver.heads(),
        warnings: solver.warnings().to_vec(),
        initial_point: initial,
    })
}

fn require(config: &SolverConfig, ok: bool, what: &str) -> Result<(), SolverError> {
    if ok {
        Ok(())
    } else {
        Err(SolverError::Config(format!("{what} needs a {} scheme, got {}", what, config.scheme.label())))
    }
}

pub fn run_pvr_sgda(problem: &dyn MinimaxProblem, config: &SolverConfig) -> Result<RunResult, SolverError> {
    require(config, matches!(config.scheme, Scheme::Pvr { .. }), "pvr_sgda")?;
    run(problem, config)
}

pub fn run_zerosarah_sgda(problem: &dyn MinimaxProblem, config: &SolverConfig) -> Result<RunResult, SolverError> {
    require(config, matches!(config.scheme, Scheme::ZeroSarah { .. }), "zerosarah_sgda")?;
    run(problem, config)
}

pub fn run_stocgda(problem: &dyn MinimaxProblem, config: &SolverConfig) -> Result<RunResult, SolverError> {
    require(config, matches!(config.scheme, Scheme::StocGda { .. }), "stocgda")?;
    run(problem, config)
}

pub fn run_vr_agda(problem: &dyn MinimaxProblem, config: &SolverConfig) -> Result<RunResult, SolverError> {
    require(config, matches!(config.scheme, Scheme::VrAgda { .. }), "vr_agda")?;
    run(problem, config)
}

/// Deterministic reference iterations written directly against the full
/// gradients of `f`, independent of the estimator machinery.
pub mod reference {
    use super::*;

    fn project(set: &crate::sets::FeasibleSet, mut p: Vec<f64>) -> Vec<f64> {
        set.project_unchecked(&mut p);
        p
    }

    /// Smoothed GDA with exact gradients of `K`; returns `(x_t, y_t, z_t)` for
    /// `t = 0..=T`.
    pub fn smoothed_gda(
        problem: &dyn MinimaxProblem,
        start: &Point,
        eta_x: f64,
        eta_y: f64,
        rho: f64,
        r: f64,
        iterations: usize,
    ) -> Vec<Point> {
        let mut out = vec![start.clone()];
        let mut p = start.clone();
        for _ in 0..iterations {
            let mut gx = problem.grad_x(&p.x, &p.y);
            for ((g, x), z) in gx.iter_mut().zip(&p.x).zip(&p.z) {
                *g += r * (x - z);
            }
            let gy = problem.grad_y(&p.x, &p.y);
            let x = project(problem.set_x(), p.x.iter().zip(&gx).map(|(a, g)| a - eta_x * g).collect());
            let y = project(problem.set_y(), p.y.iter().zip(&gy).map(|(a, g)| a + eta_y * g).collect());
            let z = p.z.iter().zip(&x).map(|(zi, xi)| zi + rho * (xi - zi)).collect();
            p = Point { x, y, z };
            out.push(p.clone());
        }
        out
    }

    /// Simultaneous projected GDA on `f`.
    pub fn gda(problem: &dyn MinimaxProblem, start: &Point, eta_x: f64, eta_y: f64, iterations: usize) -> Vec<Point> {
        let mut out = vec![start.clone()];
        let mut p = start.clone();
        for _ in 0..iterations {
            let gx = problem.grad_x(&p.x, &p.y);
            let gy = problem.grad_y(&p.x, &p.y);
            let x = project(problem.set_x(), p.x.iter().zip(&gx).map(|(a, g)| a - eta_x * g).collect());
            let y = project(problem.set_y(), p.y.iter().zip(&gy).map(|(a, g)| a + eta_y * g).collect());
            p = Point { z: x.clone(), x, y };
            out.push(p.clone());
        }
        out
    }

    /// Alternating projected GDA on `f`: `x` first, then `y` at the new `x`.
    pub fn agda(problem: &dyn MinimaxProblem, start: &Point, eta_x: f64, eta_y: f64, iterations: usize) -> Vec<Point> {
        let mut out = vec![start.clone()];
        let mut p = start.clone();
        for _ in 0..iterations {
            let gx = problem.grad_x(&p.x, &p.y);
            let x = project(problem.set_x(), p.x.iter().zip(&gx).map(|(a, g)| a - eta_x * g).collect());
            let gy = problem.grad_y(&x, &p.y);
            let y = project(problem.set_y(), p.y.iter().zip(&gy).map(|(a, g)| a + eta_y * g).collect());
            p = Point { z: x.clone(), x, y };
            out.push(p.clone());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{ToyBilinearProblem, ToySpec};

    fn toy() -> ToyBilinearProblem {
        ToyBilinearProblem::random(&ToySpec { n: 30, ..Default::default() }).unwrap()
    }

    fn smoothed(scheme: Scheme, t: usize) -> SolverConfig {
        let mut c = SolverConfig::new(0.05, 0.05, 0.1, 2.0, scheme, t);
        c.diagnostics.record_trajectory = true;
        c
    }

    fn max_gap(a: &[Point], b: &[Point]) -> f64 {
        assert_eq!(a.len(), b.len());
        a.iter()
            .zip(b)
            .map(|(p, q)| {
                linalg::max_abs_diff(&p.x, &q.x)
                    .max(linalg::max_abs_diff(&p.y, &q.y))
                    .max(linalg::max_abs_diff(&p.z, &q.z))
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn step_examples() {
        let p = toy();
        // v = w = 0 keeps x and y and moves z toward x.
        let cfg = SolverConfig::new(0.1, 0.1, 0.25, 2.0, Scheme::Pvr { p: 1.0, batch: 1 }, 1);
        let mut s = Solver::new(&p, cfg).unwrap();
        s.point.z = vec![0.4; 5];
        s.point.x = vec![0.2, 0.0, 0.0, 0.0, 0.0];
        s.estimated = true;
        if let EstimatorState::Pvr(e) = &mut s.est {
            e.v = vec![0.0; 5];
            e.w = vec![0.0; 5];
        }
        let before = s.point.clone();
        s.apply_step().unwrap();
        assert_eq!(s.point.x, before.x);
        assert_eq!(s.point.y, before.y);
        for (z, (z0, x)) in s.point.z.iter().zip(before.z.iter().zip(&before.x)) {
            assert!((z - (z0 + 0.25 * (x - z0))).abs() < 1e-15);
        }

        // ρ = 1 resets z to the new x; an interior step moves x by η v.
        let cfg = SolverConfig::new(0.1, 0.1, 1.0, 2.0, Scheme::Pvr { p: 1.0, batch: 1 }, 1);
        let mut s = Solver::new(&p, cfg).unwrap();
        s.estimated = true;
        if let EstimatorState::Pvr(e) = &mut s.est {
            e.v = vec![1.0, 0.0, 0.0, 0.0, 0.0];
            e.w = vec![0.0; 5];
        }
        s.apply_step().unwrap();
        assert!((s.point.x[0] + 0.1).abs() < 1e-15);
        assert_eq!(s.point.z, s.point.x);
    }

    #[test]
    fn config_errors_precede_iterations() {
        let p = toy();
        let mut bad = smoothed(Scheme::Pvr { p: 0.0, batch: 1 }, 3);
        assert!(matches!(run(&p, &bad), Err(SolverError::Config(_))));
        bad.scheme = Scheme::ZeroSarah { batch: 31, lambda: None, init: ZeroSarahInit::WarmStart };
        assert!(run(&p, &bad).is_err());
        bad.scheme = Scheme::Pvr { p: 0.5, batch: 1 };
        bad.r = 0.5 * p.lipschitz();
        assert!(run(&p, &bad).is_err());
        bad.r = 2.0;
        bad.rho = 1.5;
        assert!(run(&p, &bad).is_err());
        assert!(run_zerosarah_sgda(&p, &smoothed(Scheme::Pvr { p: 0.5, batch: 1 }, 1)).is_err());
    }

    #[test]
    fn zero_iterations_give_only_the_initial_record() {
        let p = toy();
        let r = run(&p, &smoothed(Scheme::Pvr { p: 0.5, batch: 1 }, 0)).unwrap();
        assert_eq!(r.trace.len(), 1);
        assert_eq!(r.trace[0].t, 0);
        assert_eq!(r.oracle_count, 0);
        assert_eq!(r.final_point, r.initial_point);
    }

    #[test]
    fn pvr_with_certain_coin_is_deterministic_smoothed_gda() {
        let p = toy();
        let cfg = smoothed(Scheme::Pvr { p: 1.0, batch: 1 }, 200);
        let r = run(&p, &cfg).unwrap();
        let reference = reference::smoothed_gda(&p, &r.initial_point, 0.05, 0.05, 0.1, 2.0, 200);
        assert_eq!(max_gap(r.trajectory.as_ref().unwrap(), &reference), 0.0);
        assert_eq!(r.oracle_count, 200 * 2 * 30);
    }

    #[test]
    fn zerosarah_full_batch_tracks_reference() {
        let p = toy();
        let cfg = smoothed(Scheme::ZeroSarah { batch: 30, lambda: None, init: ZeroSarahInit::WarmStart }, 200);
        let r = run(&p, &cfg).unwrap();
        let reference = reference::smoothed_gda(&p, &r.initial_point, 0.05, 0.05, 0.1, 2.0, 200);
        assert!(max_gap(r.trajectory.as_ref().unwrap(), &reference) <= 1e-8);
        assert_eq!(r.oracle_count, 2 * 30 + 4 * 30 * 200);
    }

    #[test]
    fn single_component_zerosarah_is_exact() {
        let p = ToyBilinearProblem::random(&ToySpec { n: 1, ..Default::default() }).unwrap();
        let mut cfg = smoothed(Scheme::ZeroSarah { batch: 1, lambda: None, init: ZeroSarahInit::WarmStart }, 50);
        cfg.diagnostics.estimator_error = true;
        let r = run(&p, &cfg).unwrap();
        for rec in &r.trace[..50] {
            assert!(rec.err_x.unwrap() <= 1e-12 && rec.err_y.unwrap() <= 1e-12);
        }
    }

    #[test]
    fn baselines_with_full_batches_match_references() {
        let p = toy();
        let mut cfg = SolverConfig::new(0.05, 0.05, 1.0, 0.0, Scheme::StocGda { batch: 30 }, 100);
        cfg.diagnostics.record_trajectory = true;
        let r = run_stocgda(&p, &cfg).unwrap();
        let reference = reference::gda(&p, &r.initial_point, 0.05, 0.05, 100);
        assert!(max_gap(r.trajectory.as_ref().unwrap(), &reference) <= 1e-12);

        cfg.scheme = Scheme::VrAgda { batch: 30, snapshot_period: Some(1) };
        let r = run_vr_agda(&p, &cfg).unwrap();
        let reference = reference::agda(&p, &r.initial_point, 0.05, 0.05, 100);
        assert!(max_gap(r.trajectory.as_ref().unwrap(), &reference) <= 1e-12);
    }

    #[test]
    fn runs_are_bitwise_reproducible_and_feasible() {
        let p = toy();
        let schemes = [
            Scheme::Pvr { p: 0.2, batch: 2 },
            Scheme::ZeroSarah { batch: 5, lambda: None, init: ZeroSarahInit::WarmStart },
            Scheme::StocGda { batch: 3 },
            Scheme::VrAgda { batch: 3, snapshot_period: None },
        ];
        for scheme in schemes {
            let mut cfg = smoothed(scheme, 300);
            cfg.seed = 9;
            cfg.diagnostics.estimator_error = true;
            let a = run(&p, &cfg).unwrap();
            let b = run(&p, &cfg).unwrap();
            let strip = |t: &[TraceRecord]| t.iter().map(|r| TraceRecord { wall_s: None, ..r.clone() }).collect::<Vec<_>>();
            assert_eq!(strip(&a.trace), strip(&b.trace));
            assert_eq!(a.trajectory, b.trajectory);
            let tr = a.trajectory.unwrap();
            for (k, q) in tr.iter().enumerate() {
                assert!(p.set_x().contains(&q.x, 0.0) && p.set_y().contains(&q.y, 1e-12));
                // z stays inside the bounding box of {z_0} ∪ {x_s}.
                if k > 0 {
                    let prev = &tr[k - 1];
                    for j in 0..q.z.len() {
                        let lo = prev.z[j].min(q.x[j]) - 1e-15;
                        let hi = prev.z[j].max(q.x[j]) + 1e-15;
                        assert!(q.z[j] >= lo && q.z[j] <= hi);
                    }
                }
            }
            for w in a.trace.windows(2) {
                assert!(w[1].t > w[0].t && w[1].oracle_count >= w[0].oracle_count);
            }
        }
    }

    #[test]
    fn oracle_counts_follow_the_formulas() {
        let p = toy();
        let mut cfg = smoothed(Scheme::Pvr { p: 0.3, batch: 2 }, 400);
        cfg.seed = 3;
        let mut s = Solver::new(&p, cfg.clone()).unwrap();
        for _ in 0..400 {
            s.step().unwrap();
        }
        let heads = s.heads();
        assert_eq!(s.oracle_calls(), heads * 2 * 30 + (400 - heads) * 4 * 2);

        cfg.scheme = Scheme::VrAgda { batch: 3, snapshot_period: Some(7) };
        let r = run(&p, &cfg).unwrap();
        assert_eq!(r.oracle_count, 2 * 30 * (400u64).div_ceil(7) + 4 * 3 * 400);

        cfg.scheme = Scheme::ZeroSarah { batch: 4, lambda: None, init: ZeroSarahInit::Zero };
        let r = run(&p, &cfg).unwrap();
        assert_eq!(r.oracle_count, 4 * 4 * 400);
    }

    #[test]
    fn trace_cadence_and_best_iterate() {
        let p = toy();
        let mut cfg = smoothed(Scheme::Pvr { p: 0.5, batch: 1 }, 95);
        cfg.trace_every = 10;
        let r = run(&p, &cfg).unwrap();
        let ts: Vec<usize> = r.trace.iter().map(|x| x.t).collect();
        assert_eq!(ts, vec![0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 95]);
        let min = r.trace.iter().map(TraceRecord::residual).fold(f64::INFINITY, f64::min);
        assert_eq!(r.best.residual, min);
        assert!(r.trace.last().unwrap().err_x.is_none());
    }

    #[test]
    fn potential_is_recorded_when_requested() {
        let p = ToyBilinearProblem::random(&ToySpec { box_bound: 3.0, ..Default::default() }).unwrap();
        let mut cfg = smoothed(Scheme::ZeroSarah { batch: 7, lambda: None, init: ZeroSarahInit::WarmStart }, 5);
        cfg.diagnostics.potential = true;
        let r = run(&p, &cfg).unwrap();
        assert!(r.trace[..5].iter().all(|x| x.phi.is_some()));
        assert!(r.diag_oracle_count > 0);
    }
}
