//! Monte-Carlo checks of the expected-descent and estimator-error
//! inequalities.
//!
//! Every check conditions on a solver state at iteration `t` whose estimate
//! `(v_t, w_t)` is already formed. The step to `t + 1` is then
//! deterministic, and replicas only redraw the randomness of iteration
//! `t + 1` from independent streams.

use rayon::prelude::*;
use serde::Serialize;

use super::{kappa, InnerOracles, SchemeConstants, TheoryConstants, TheoryError};
use crate::linalg;
use crate::rng::rng_stream;
use crate::solvers::{Scheme, Solver};

/// One inequality `lhs ≤ rhs` (recursions) tested as `mean − 3·se ≤ rhs`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InequalityCheck {
    pub name: String,
    pub t: usize,
    pub lhs: f64,
    pub se: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// One probed iteration of the descent check: `lhs` estimates
/// `E[Φ_t − Φ_{t+1}]` and `verdict` is `lhs + 3·stderr ≥ rhs`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DescentProbe {
    pub iteration: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub stderr: f64,
    pub verdict: bool,
    /// The right-hand side with `24rρ‖x*(z_t) − x(y₊, z_t)‖²` as the
    /// coupling term, reported for information only.
    pub rhs_primal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DescentReport {
    pub scheme: String,
    pub replicas: usize,
    pub probes: Vec<DescentProbe>,
    pub satisfied: usize,
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Per-replica error terms at `t + 1`: `(e_x, e_y, D_x, D_y)`; the tracker
/// terms are zero for PVR.
fn replica_errors(next: &Solver<'_>, seed: u64, stream: u64) -> Result<(f64, f64, f64, f64), TheoryError> {
    let mut s = next.clone();
    s.reseed(rng_stream(seed, stream));
    s.estimate().map_err(|e| TheoryError::Invalid(e.to_string()))?;
    let p = s.point();
    let o = s.oracle();
    let (v, w) = s.estimates().expect("estimated");
    let ex = linalg::dist_sq(&o.exact_grad_x(&p.x, &p.z, &p.y), v);
    let ey = linalg::dist_sq(&o.exact_grad_y(&p.x, &p.y), w);
    let (dx, dy) = s.zerosarah().map_or((0.0, 0.0), |z| z.tracker_errors(o, p));
    Ok((ex, ey, dx, dy))
}

fn draw_replicas(next: &Solver<'_>, seed: u64, base: u64, count: usize) -> Result<Vec<(f64, f64, f64, f64)>, TheoryError> {
    (0..count as u64).into_par_iter().map(|k| replica_errors(next, seed, base + k)).collect()
}

/// State after `estimate` at `t` and the deterministic step to `t + 1`.
struct Transition<'a> {
    here: Solver<'a>,
    next: Solver<'a>,
    ex: f64,
    ey: f64,
    dx: f64,
    dy: f64,
    dx2: f64,
    dy2: f64,
    dz2: f64,
}

fn transition<'a>(state: &Solver<'a>) -> Result<Transition<'a>, TheoryError> {
    let mut here = state.clone();
    if matches!(here.config().scheme, Scheme::StocGda { .. } | Scheme::VrAgda { .. }) {
        return Err(TheoryError::Invalid("checks apply to the smoothed schemes only".into()));
    }
    here.estimate().map_err(|e| TheoryError::Invalid(e.to_string()))?;
    let p = here.point().clone();
    let o = here.oracle();
    let (v, w) = here.estimates().expect("estimated");
    let ex = linalg::dist_sq(&o.exact_grad_x(&p.x, &p.z, &p.y), v);
    let ey = linalg::dist_sq(&o.exact_grad_y(&p.x, &p.y), w);
    let (dx, dy) = here.zerosarah().map_or((0.0, 0.0), |z| z.tracker_errors(o, &p));
    let mut next = here.clone();
    next.apply_step().map_err(|e| TheoryError::Invalid(e.to_string()))?;
    let q = next.point();
    Ok(Transition {
        dx2: linalg::dist_sq(&q.x, &p.x),
        dy2: linalg::dist_sq(&q.y, &p.y),
        dz2: linalg::dist_sq(&q.z, &p.z),
        here,
        next,
        ex,
        ey,
        dx,
        dy,
    })
}

fn check(name: &str, t: usize, samples: &[f64], rhs: f64) -> InequalityCheck {
    let (lhs, se) = mean_se(samples);
    // Rounding slack for bounds that are exactly zero.
    let slack = 1e-12 * (1.0 + rhs.abs());
    InequalityCheck { name: name.into(), t, lhs, se, rhs, holds: lhs - 3.0 * se <= rhs + slack }
}

/// The two PVR error recursions from `state`, using the problem's own `L`.
pub fn check_pvr_recursions(state: &Solver<'_>, draws: usize, seed: u64) -> Result<Vec<InequalityCheck>, TheoryError> {
    let Scheme::Pvr { p, .. } = state.config().scheme else {
        return Err(TheoryError::Invalid("PVR recursions need a PVR solver".into()));
    };
    let tr = transition(state)?;
    let l = state.problem().lipschitz();
    let r = state.oracle().r();
    let t = tr.here.t();
    let samples = draw_replicas(&tr.next, seed, (t as u64) << 32, draws)?;
    let ex: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let ey: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let q = 1.0 - p;
    let bx = q * tr.ex + 3.0 * q * ((l + r).powi(2) * tr.dx2 + l * l * tr.dy2 + r * r * tr.dz2);
    let by = q * tr.ey + 2.0 * q * l * l * (tr.dx2 + tr.dy2);
    Ok(vec![check("pvr_v", t, &ex, bx), check("pvr_w", t, &ey, by)])
}

/// The estimator and tracker recursions of ZeroSARAH from `state`, with
/// `β = 1/b`, using the problem's own `L`.
pub fn check_zerosarah_recursions(
    state: &Solver<'_>,
    draws: usize,
    seed: u64,
) -> Result<Vec<InequalityCheck>, TheoryError> {
    let Scheme::ZeroSarah { batch, .. } = state.config().scheme else {
        return Err(TheoryError::Invalid("ZeroSARAH recursions need a ZeroSARAH solver".into()));
    };
    let tr = transition(state)?;
    let lambda = state.config().lambda().expect("ZeroSARAH has λ");
    let l = state.problem().lipschitz();
    let r = state.oracle().r();
    let n = state.problem().n() as f64;
    let b = batch as f64;
    let beta = 1.0 / b;
    let zeta = (1.0 - b / n) * (1.0 + beta);
    let xi = (1.0 - b / n) * (1.0 + 1.0 / beta);
    let t = tr.here.t();
    let samples = draw_replicas(&tr.next, seed, (t as u64) << 32, draws)?;
    let col = |k: usize| -> Vec<f64> {
        samples
            .iter()
            .map(|s| match k {
                0 => s.0,
                1 => s.1,
                2 => s.2,
                _ => s.3,
            })
            .collect()
    };
    let moves_x = (l + r).powi(2) * tr.dx2 + l * l * tr.dy2 + r * r * tr.dz2;
    let moves_y = l * l * (tr.dx2 + tr.dy2);
    let bound_v = (1.0 - lambda) * tr.ex + 2.0 * lambda * lambda / b * tr.dx + 6.0 / b * moves_x;
    let bound_w = (1.0 - lambda) * tr.ey + 2.0 * lambda * lambda / b * tr.dy + 4.0 / b * moves_y;
    let bound_d = zeta * tr.dx + 3.0 * xi * moves_x;
    let bound_h = zeta * tr.dy + 2.0 * xi * moves_y;
    Ok(vec![
        check("zerosarah_v", t, &col(0), bound_v),
        check("zerosarah_w", t, &col(1), bound_w),
        check("zerosarah_d", t, &col(2), bound_d),
        check("zerosarah_h", t, &col(3), bound_h),
    ])
}

/// Expected descent of the potential at each probed iteration.
///
/// `base` is advanced along one trajectory (its own stream) to every probe
/// in increasing order; at each probe `replicas` independent draws of the
/// next estimate give the Monte-Carlo mean of `Φ_{t+1}`. The right-hand side
/// uses the coupling term `24rρκ‖y_t − y₊‖` in place of the distance
/// between primal solutions.
pub fn check_descent(
    base: &Solver<'_>,
    constants: &TheoryConstants,
    probes: &[usize],
    replicas: usize,
    seed: u64,
    tol: f64,
) -> Result<DescentReport, TheoryError> {
    if replicas < 30 {
        return Err(TheoryError::Replicas { need: 30, got: replicas });
    }
    let cfg = base.config().clone();
    let problem = base.problem();
    let inner = InnerOracles::new(problem, cfg.r, tol)?;
    let n = problem.n() as f64;
    let r = cfg.r;
    let kap = kappa(constants.l, r, cfg.eta_y, constants.diameter_y);
    let mut probes_sorted = probes.to_vec();
    probes_sorted.sort_unstable();
    probes_sorted.dedup();

    let mut walker = base.clone();
    let mut out = Vec::with_capacity(probes_sorted.len());
    for &t in &probes_sorted {
        if walker.t() > t {
            return Err(TheoryError::Invalid(format!("probe {t} precedes the base state")));
        }
        while walker.t() < t {
            walker.step().map_err(|e| TheoryError::Invalid(e.to_string()))?;
        }
        let tr = transition(&walker)?;
        let p = tr.here.point();
        let (v, w) = tr.here.estimates().expect("estimated");
        let trackers = tr.here.zerosarah().map(|_| (tr.dx, tr.dy));
        let phi_t = super::potential_value(&inner, p, v, w, constants, trackers)?.phi;

        let q = tr.next.point();
        let v_next = inner.k_value(&q.x, &q.z, &q.y) - 2.0 * inner.dual_value(&q.y, &q.z)?
            + 2.0 * inner.prox_from(&q.z, Some(&q.y))?.0;
        let samples = draw_replicas(&tr.next, seed, ((t as u64) << 32) | (1 << 31), replicas)?;
        let phi_next: Vec<f64> = samples
            .iter()
            .map(|&(ex, ey, dx, dy)| match constants.scheme {
                SchemeConstants::Pvr { p } => v_next + constants.gamma / (2.0 * p) * (ex + ey),
                SchemeConstants::ZeroSarah { tau, .. } => v_next + constants.gamma * (ex + ey) + tau * (dx + dy),
            })
            .collect();
        let (mean_next, se) = mean_se(&phi_next);
        let lhs = phi_t - mean_next;

        let y_plus = inner.y_plus(&p.y, &p.z, cfg.eta_y)?;
        let gap_sq = linalg::dist_sq(&p.y, &y_plus);
        let coupling = 24.0 * r * cfg.rho * kap * gap_sq.sqrt();
        let core = tr.dx2 / (2.0 * cfg.eta_x) + gap_sq / (4.0 * cfg.eta_y) + r / (6.0 * cfg.rho) * tr.dz2;
        let positive = match constants.scheme {
            SchemeConstants::Pvr { .. } => core + constants.gamma / 4.0 * (tr.ex + tr.ey),
            SchemeConstants::ZeroSarah { lambda, tau, .. } => {
                core + constants.gamma * lambda / 2.0 * (tr.ex + tr.ey) + tau / n.sqrt() * (tr.dx + tr.dy)
            }
        };
        let rhs = positive - coupling;
        let x_star = inner.x_star(&p.z)?;
        let primal_gap = linalg::dist_sq(&x_star, &inner.x_of(&y_plus, &p.z)?);
        let rhs_primal = positive - 24.0 * r * cfg.rho * primal_gap;
        // Inner solves carry an absolute error of order `tol` in each Φ.
        let slack = 10.0 * tol;
        out.push(DescentProbe {
            iteration: t,
            lhs,
            rhs,
            stderr: se,
            verdict: lhs + 3.0 * se + slack >= rhs,
            rhs_primal,
        });
    }
    let satisfied = out.iter().filter(|p| p.verdict).count();
    Ok(DescentReport { scheme: cfg.scheme.label().into(), replicas, probes: out, satisfied })
}
