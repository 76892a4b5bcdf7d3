//! Acceptance criteria. Each test writes one `ACCEPTANCE [k] ... PASS|FAIL`
//! line straight to stderr (bypassing the test output capture) before
//! asserting, so a full `cargo test` log lists every verdict.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use ncc_core::data::{gen_a9a_like, gen_poison_data, split_poison};
use ncc_core::estimators::ZeroSarahInit;
use ncc_core::harness::{
    brute_force_simplex_projection, read_trace, run_experiment, run_suite, ExperimentConfig, Manifest, Suite,
    SuiteOptions,
};
use ncc_core::problems::{
    fd_relative_error, sample_point, MinimaxProblem, PoisonParams, PoisonProblem, RobustLogisticParams,
    RobustLogisticProblem, ToyBilinearProblem, ToySpec,
};
use ncc_core::rng::rng_stream;
use ncc_core::sets::FeasibleSet;
use ncc_core::solvers::{self, reference, Scheme, SolverConfig};
use ncc_core::theory::{self, SchemeConstants};

fn verdict(id: u32, name: &str, pass: bool, detail: &str) {
    let line = format!("ACCEPTANCE [{id:>2}] {name}: {} ({detail})\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn max_gap(a: &[ncc_core::estimators::Point], b: &[ncc_core::estimators::Point]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(p, q)| {
            p.x.iter().zip(&q.x).chain(p.y.iter().zip(&q.y)).chain(p.z.iter().zip(&q.z)).map(|(u, v)| (u - v).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn c01_estimator_exactness() {
    let started = Instant::now();
    let p = ToyBilinearProblem::random(&ToySpec { dim_x: 5, dim_y: 5, ..Default::default() }).unwrap();
    let r = 2.0 * p.lipschitz();
    let (eta_x, eta_y, rho, big_t) = (0.05, 0.05, 0.1, 500);
    let mut gaps = Vec::new();
    let schemes = [
        Scheme::Pvr { p: 1.0, batch: 1 },
        Scheme::ZeroSarah { batch: p.n(), lambda: None, init: ZeroSarahInit::WarmStart },
    ];
    for scheme in schemes {
        let mut cfg = SolverConfig::new(eta_x, eta_y, rho, r, scheme, big_t);
        cfg.diagnostics.record_trajectory = true;
        let out = solvers::run(&p, &cfg).unwrap();
        let refr = reference::smoothed_gda(&p, &out.initial_point, eta_x, eta_y, rho, r, big_t);
        gaps.push(max_gap(out.trajectory.as_ref().unwrap(), &refr));
    }
    let elapsed = started.elapsed();
    let pass = gaps.iter().all(|&g| g <= 1e-8) && elapsed < Duration::from_secs(5);
    verdict(1, "estimator exactness", pass, &format!("max gaps pvr {:.1e}, zerosarah {:.1e}; {elapsed:.2?}", gaps[0], gaps[1]));
    assert!(pass);
}

#[test]
fn c02_simplex_projection_vs_brute_force() {
    let mut rng = rng_stream(2, 2);
    let mut worst = 0.0f64;
    for d in 2..=6 {
        let set = FeasibleSet::simplex(d).unwrap();
        for _ in 0..1000 {
            let u: Vec<f64> = (0..d).map(|_| 3.0 * rng.standard_normal()).collect();
            let fast = set.project(&u).unwrap();
            let slow = brute_force_simplex_projection(&u);
            worst = fast.iter().zip(&slow).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
        }
    }
    let pass = worst <= 1e-9;
    verdict(2, "simplex projection vs brute force", pass, &format!("max error {worst:.1e} over 5000 inputs"));
    assert!(pass);
}

fn worst_fd(p: &dyn MinimaxProblem, radius: f64, seed: u64) -> f64 {
    let mut rng = rng_stream(seed, 3);
    (0..200)
        .map(|k| {
            let x = sample_point(p.set_x(), radius, &mut rng);
            let y = sample_point(p.set_y(), radius, &mut rng);
            fd_relative_error(p, k % p.n(), &x, &y).unwrap()
        })
        .fold(0.0, f64::max)
}

#[test]
fn c03_gradient_correctness() {
    let toy = ToyBilinearProblem::random(&ToySpec::default()).unwrap();
    let logistic = RobustLogisticProblem::new(gen_a9a_like(3, 300).unwrap(), RobustLogisticParams::default()).unwrap();
    let (ds, _) = gen_poison_data(3, 300, 20, 1e-3).unwrap();
    let poison =
        PoisonProblem::new(split_poison(&ds, 3, 0.3, 0.1).unwrap(), PoisonParams::default()).unwrap();
    let errs = [worst_fd(&toy, 1.0, 1), worst_fd(&logistic, 2.0, 2), worst_fd(&poison, 2.0, 3)];
    let pass = errs.iter().all(|&e| e <= 1e-5);
    verdict(
        3,
        "gradient correctness",
        pass,
        &format!("worst relative FD error toy {:.1e}, logistic {:.1e}, poison {:.1e}", errs[0], errs[1], errs[2]),
    );
    assert!(pass);
}

#[test]
fn c04_estimator_recursions() {
    let started = Instant::now();
    let rep = run_suite(Suite::Estimators, &SuiteOptions { draws: 100_000, ..Default::default() }).unwrap();
    let elapsed = started.elapsed();
    let held = rep.items.iter().filter(|i| i.passed).count();
    let failed: Vec<&str> = rep.items.iter().filter(|i| !i.passed).map(|i| i.name.as_str()).collect();
    let pass = rep.passed && rep.items.len() == 30 && elapsed < Duration::from_secs(120);
    verdict(
        4,
        "estimator recursions",
        pass,
        &format!("{held}/{} inequalities within 3 SE at 5 states; {elapsed:.1?}; failed {failed:?}", rep.items.len()),
    );
    assert!(pass);
}

#[test]
fn c05_step_size_calculators() {
    let pvr = theory::pvr_step_sizes(1.0, 0.5, 2.0, std::f64::consts::SQRT_2).unwrap();
    let zs = theory::zerosarah_step_sizes(1.0, 10_000, 2.0, 2.0, std::f64::consts::SQRT_2).unwrap();
    let SchemeConstants::ZeroSarah { b, lambda, .. } = zs.constants.scheme else { panic!("not ZeroSARAH") };
    let values_ok = (pvr.eta_x - 1.0132e-3).abs() < 5e-8 && b == 200 && lambda == 0.005;
    let mut sweep_ok = true;
    let mut points = 0;
    for i in 0..10 {
        for j in 0..10 {
            let l = 10f64.powf(i as f64 / 9.0);
            let r = (2.0 + 2.0 * j as f64 / 9.0) * l;
            let bounds = [
                theory::pvr_step_sizes(l, 0.1 + 0.1 * j as f64 / 1.2, r, 1.0).unwrap(),
                theory::zerosarah_step_sizes(l, 100 * (i + 1), 2.0, r, 1.0).unwrap(),
            ];
            for bd in bounds {
                sweep_ok &= bd.constants.sigma1 <= 2.0 + 1e-12 && bd.constants.sigma2 <= 3.0 + 1e-12;
            }
            points += 1;
        }
    }
    let pass = values_ok && sweep_ok;
    verdict(
        5,
        "step-size calculators",
        pass,
        &format!("η_x = {:.4e}, b = {b}, λ = {lambda}; σ bounds over {points} points: {sweep_ok}", pvr.eta_x),
    );
    assert!(pass);
}

/// Best-iterate residuals over seeds, at each horizon.
fn trend(p: &ToyBilinearProblem, bounds: &theory::StepSizeBounds, scheme: Scheme, r: f64) -> Vec<Vec<f64>> {
    let c = 10.0 * bounds.rho;
    [100usize, 1000, 10_000]
        .iter()
        .map(|&t| {
            let rho = (c / (t as f64).sqrt()).min(bounds.rho);
            (0..20u64)
                .map(|seed| {
                    let mut cfg = SolverConfig::new(bounds.eta_x, bounds.eta_y, rho, r, scheme.clone(), t);
                    cfg.seed = seed;
                    cfg.trace_every = 10;
                    solvers::run(p, &cfg).unwrap().best.residual
                })
                .collect()
        })
        .collect()
}

fn loglog_slope(ts: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = ts.iter().map(|t| t.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / lx.len() as f64;
    let my = ly.iter().sum::<f64>() / ly.len() as f64;
    let num: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    num / den
}

#[test]
fn c06_convergence_trend() {
    let started = Instant::now();
    let spec = ToySpec { n: 100, dim_x: 20, dim_y: 10, box_bound: 0.01, ..Default::default() };
    let p = ToyBilinearProblem::random(&spec).unwrap();
    let l = p.lipschitz();
    let r = 2.0 * l.max(1.0);
    let dy = p.set_y().diameter();
    let pvr = theory::pvr_step_sizes(l, 0.5, r, dy).unwrap();
    let zs = theory::zerosarah_step_sizes(l, p.n(), 2.0, r, dy).unwrap();
    let SchemeConstants::ZeroSarah { b, .. } = zs.constants.scheme else { panic!("not ZeroSARAH") };
    let runs = [
        ("pvr", trend(&p, &pvr, Scheme::Pvr { p: 0.5, batch: 1 }, r)),
        ("zerosarah", trend(&p, &zs, Scheme::ZeroSarah { batch: b, lambda: None, init: ZeroSarahInit::WarmStart }, r)),
    ];
    let mut pass = true;
    let mut detail = Vec::new();
    for (name, res) in &runs {
        let improved = res[0].iter().zip(&res[2]).filter(|(a, b)| b < a).count();
        let means: Vec<f64> = res.iter().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
        let slope = loglog_slope(&[1e2, 1e3, 1e4], &means);
        pass &= improved >= 18 && slope <= -0.15;
        detail.push(format!("{name}: {improved}/20 improved, slope {slope:.3}"));
    }
    let elapsed = started.elapsed();
    pass &= elapsed < Duration::from_secs(600);
    verdict(6, "convergence trend", pass, &format!("{}; {elapsed:.1?}", detail.join("; ")));
    assert!(pass);
}

#[test]
fn c07_expected_potential_descent() {
    let started = Instant::now();
    let rep = run_suite(Suite::Descent, &SuiteOptions { replicas: 100, seed: 1, ..Default::default() }).unwrap();
    let elapsed = started.elapsed();
    let counts: Vec<String> = rep
        .items
        .iter()
        .map(|i| format!("{} {}/10", i.name, i.detail["satisfied"]))
        .collect();
    let pass = rep.passed && rep.items.len() == 2 && elapsed < Duration::from_secs(600);
    verdict(7, "expected potential descent", pass, &format!("{}; {elapsed:.1?}", counts.join(", ")));
    assert!(pass);
}

/// `solver -> seed -> (manifest, trace)` for every run of `config`.
type Runs = BTreeMap<String, BTreeMap<u64, (Manifest, Vec<solvers::TraceRecord>)>>;

fn run_config(config: &ExperimentConfig, dir: &Path) -> Runs {
    let mut out: Runs = BTreeMap::new();
    for o in run_experiment(config, dir, None).unwrap() {
        let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(&o.manifest).unwrap()).unwrap();
        let trace = read_trace(&o.trace).unwrap();
        out.entry(o.solver).or_default().insert(o.seed, (manifest, trace));
    }
    out
}

#[test]
fn c08_robust_logistic_ordering() {
    let started = Instant::now();
    let config = ExperimentConfig::from_path(&config_path("robust_logistic.json")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let runs = run_config(&config, dir.path());
    let any = runs.values().next().unwrap().values().next().unwrap();
    let n = any.0.problem["n"].as_u64().unwrap();
    let budget = 50 * n;
    let at_budget = |solver: &str| -> Vec<f64> {
        runs[solver]
            .values()
            .map(|(_, tr)| tr.iter().filter(|r| r.oracle_count <= budget).last().unwrap().primal.unwrap())
            .collect()
    };
    let stoc = at_budget("stocgda");
    let mut pass = true;
    let mut detail = vec![format!("n = {n}, source {}", any.0.data_source)];
    for solver in ["pvr_sgda", "zerosarah_sgda"] {
        let v = at_budget(solver);
        let wins = v.iter().zip(&stoc).filter(|(a, b)| a < b).count();
        pass &= wins >= 4;
        detail.push(format!("{solver} below stocgda in {wins}/5"));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    detail.push(format!(
        "mean Φ̃ pvr {:.4}, zerosarah {:.4}, stocgda {:.4}, vr_agda {:.4}",
        mean(&at_budget("pvr_sgda")),
        mean(&at_budget("zerosarah_sgda")),
        mean(&stoc),
        mean(&at_budget("vr_agda"))
    ));
    let elapsed = started.elapsed();
    pass &= elapsed < Duration::from_secs(900);
    verdict(8, "robust logistic ordering", pass, &format!("{}; {elapsed:.1?}", detail.join("; ")));
    assert!(pass);
}

#[test]
fn c09_data_poisoning_accuracy() {
    let started = Instant::now();
    let config = ExperimentConfig::from_path(&config_path("poison.json")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let runs = run_config(&config, dir.path());
    let mean_acc = |solver: &str| -> f64 {
        let v: Vec<f64> = runs[solver].values().map(|(_, tr)| tr.last().unwrap().accuracy.unwrap()).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let (pvr, zs, stoc, agda) =
        (mean_acc("pvr_sgda"), mean_acc("zerosarah_sgda"), mean_acc("stocgda"), mean_acc("vr_agda"));
    let elapsed = started.elapsed();
    let ok = |a: f64| a <= 0.55 && a <= stoc - 0.03;
    let pass = ok(pvr) && ok(zs) && elapsed < Duration::from_secs(300);
    verdict(
        9,
        "data poisoning accuracy",
        pass,
        &format!("mean test accuracy pvr {pvr:.3}, zerosarah {zs:.3}, stocgda {stoc:.3}, vr_agda {agda:.3}; {elapsed:.1?}"),
    );
    assert!(pass);
}

#[test]
fn c10_oracle_accounting() {
    let p = ToyBilinearProblem::random(&ToySpec::default()).unwrap();
    let n = p.n() as u64;
    let r = 2.0 * p.lipschitz();
    let big_t = 237u64;
    let mut mismatches = Vec::new();
    let cases = [
        Scheme::Pvr { p: 0.3, batch: 4 },
        Scheme::ZeroSarah { batch: 6, lambda: None, init: ZeroSarahInit::WarmStart },
        Scheme::ZeroSarah { batch: 6, lambda: Some(0.2), init: ZeroSarahInit::Zero },
        Scheme::StocGda { batch: 5 },
        Scheme::VrAgda { batch: 5, snapshot_period: Some(7) },
    ];
    for scheme in cases {
        for seed in 0..3 {
            let mut cfg = SolverConfig::new(0.02, 0.02, 0.1, r, scheme.clone(), big_t as usize);
            cfg.seed = seed;
            cfg.trace_every = 13;
            cfg.diagnostics.estimator_error = true;
            let out = solvers::run(&p, &cfg).unwrap();
            let expected = match scheme {
                Scheme::Pvr { batch, .. } => 2 * n * out.heads + 4 * batch as u64 * (big_t - out.heads),
                Scheme::ZeroSarah { batch, init: ZeroSarahInit::WarmStart, .. } => 2 * n + 4 * batch as u64 * big_t,
                Scheme::ZeroSarah { batch, .. } => 4 * batch as u64 * big_t,
                Scheme::StocGda { batch } => 2 * batch as u64 * big_t,
                Scheme::VrAgda { batch, snapshot_period } => {
                    let m = snapshot_period.unwrap() as u64;
                    2 * n * big_t.div_ceil(m) + 4 * batch as u64 * big_t
                }
            };
            let last = out.trace.last().unwrap().oracle_count;
            if out.oracle_count != expected || last != expected {
                mismatches.push(format!("{} seed {seed}: {} vs {expected}", scheme.label(), out.oracle_count));
            }
            if out.trace.windows(2).any(|w| w[1].oracle_count < w[0].oracle_count) {
                mismatches.push(format!("{} seed {seed}: decreasing counter", scheme.label()));
            }
        }
    }
    let pass = mismatches.is_empty();
    verdict(10, "oracle accounting", pass, &format!("15 instrumented runs, mismatches {mismatches:?}"));
    assert!(pass);
}

fn csv_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

#[test]
fn c11_determinism() {
    let mut suite = Vec::new();
    for name in ["toy.json", "poison.json", "robust_logistic.json"] {
        let mut c = ExperimentConfig::from_path(&config_path(name)).unwrap();
        // Shorter horizons keep two full reruns cheap; every code path stays.
        for s in &mut c.solvers {
            s.iterations = Some(s.iterations.unwrap_or(1000).min(300));
        }
        suite.push(c);
    }
    let mut identical = true;
    let mut files = 0;
    for (k, c) in suite.iter().enumerate() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run_experiment(c, a.path(), Some(4)).unwrap();
        run_experiment(c, b.path(), Some(1)).unwrap();
        let (ca, cb) = (csv_bytes(a.path()), csv_bytes(b.path()));
        files += ca.len();
        identical &= !ca.is_empty() && ca == cb;
        assert_eq!(ca.len(), c.solvers.len() * c.seeds.len(), "experiment {k}");
    }
    verdict(11, "determinism", identical, &format!("{files} trace CSVs byte-identical across reruns: {identical}"));
    assert!(identical);
}
