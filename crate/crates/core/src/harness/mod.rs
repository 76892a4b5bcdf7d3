//! Experiment orchestration: configuration, resolution of step sizes,
//! concurrent runs, trace and manifest files, summaries and check suites.

mod compare;
mod suites;
mod trace;

pub use compare::{compare, Stat, Summary, SummaryRow, DEFAULT_THRESHOLDS};
pub use suites::{
    brute_force_simplex_projection, run_suite, Suite, SuiteItem, SuiteOptions, SuiteReport, DESCENT_PROBES,
    RECURSION_STATES,
};
pub use trace::{read_trace, trace_to_csv, write_trace, CSV_SCHEMA};

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::data::{gen_a9a_like, gen_poison_data, parse_libsvm_with_dim, split_poison, DataError};
use crate::estimators::{BatchCoupling, ZeroSarahInit};
use crate::problems::{
    MinimaxProblem, PoisonParams, PoisonProblem, ProblemError, RobustLogisticParams, RobustLogisticProblem,
    ToyBilinearProblem, ToySpec,
};
use crate::rng::rng_stream;
use crate::solvers::{self, Diagnostics, Scheme, SolverConfig, SolverError};
use crate::theory::{self, TheoryError};

/// Environment variable overriding the master seed of an experiment.
pub const SEED_ENV: &str = "NCC_SEED";
/// Environment variable naming a LIBSVM a9a file used when a logistic
/// problem gives no `data_path`.
pub const A9A_ENV: &str = "NCC_A9A";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Theory(#[from] TheoryError),
    #[error(transparent)]
    Set(#[from] crate::sets::SetError),
    #[error("{path}, line {line}: {msg}")]
    Trace { path: PathBuf, line: usize, msg: String },
    #[error("no completed runs in {0}")]
    Empty(PathBuf),
    #[error("{} run(s) failed: {}", .0.len(), .0.join("; "))]
    RunsFailed(Vec<String>),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

fn default_logistic_n() -> Option<usize> {
    Some(2000)
}

fn default_poison_n() -> usize {
    1000
}

fn default_poison_d() -> usize {
    100
}

fn default_noise_var() -> f64 {
    1e-3
}

fn default_test_frac() -> f64 {
    0.3
}

fn default_poison_ratio() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum ProblemSpec {
    ToyBilinear(ToySpec),
    RobustLogistic {
        /// LIBSVM file; when absent, `NCC_A9A` is consulted and otherwise a
        /// synthetic a9a-like sample is generated.
        #[serde(default)]
        data_path: Option<PathBuf>,
        /// Rows kept (seeded subsample); `None` keeps all.
        #[serde(default = "default_logistic_n")]
        n: Option<usize>,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        params: RobustLogisticParams,
    },
    Poison {
        #[serde(default = "default_poison_n")]
        n: usize,
        #[serde(default = "default_poison_d")]
        d: usize,
        #[serde(default = "default_noise_var")]
        noise_var: f64,
        #[serde(default = "default_test_frac")]
        test_frac: f64,
        #[serde(default = "default_poison_ratio")]
        poison_ratio: f64,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        params: PoisonParams,
    },
}

impl ProblemSpec {
    fn with_seed_offset(&self, offset: u64) -> ProblemSpec {
        let mut out = self.clone();
        match &mut out {
            ProblemSpec::ToyBilinear(s) => s.seed = s.seed.wrapping_add(offset),
            ProblemSpec::RobustLogistic { seed, .. } => *seed = seed.wrapping_add(offset),
            ProblemSpec::Poison { seed, params, .. } => {
                *seed = seed.wrapping_add(offset);
                params.seed = params.seed.wrapping_add(offset);
            }
        }
        out
    }

    fn data_file(&self) -> Option<PathBuf> {
        match self {
            ProblemSpec::RobustLogistic { data_path, .. } => {
                data_path.clone().or_else(|| std::env::var_os(A9A_ENV).map(PathBuf::from))
            }
            _ => None,
        }
    }

    /// Builds the problem; data files are read here.
    pub fn build(&self) -> Result<ProblemInstance, HarnessError> {
        Ok(match self {
            ProblemSpec::ToyBilinear(s) => ProblemInstance::Toy(ToyBilinearProblem::random(s)?),
            ProblemSpec::RobustLogistic { n, seed, params, .. } => {
                let data = match self.data_file() {
                    Some(path) => {
                        let file = fs::File::open(&path).map_err(io_err(&path))?;
                        let full = parse_libsvm_with_dim(std::io::BufReader::new(file), Some(123))?;
                        match n {
                            Some(k) if *k < full.n() => {
                                let mut rng = rng_stream(*seed, 0xa9a);
                                let mut rows = rng.sample_without_replacement(full.n(), *k);
                                rows.sort_unstable();
                                full.subset(&rows)
                            }
                            _ => full,
                        }
                    }
                    None => gen_a9a_like(*seed, n.unwrap_or(2000))?,
                };
                ProblemInstance::Logistic(RobustLogisticProblem::new(data, params.clone())?)
            }
            ProblemSpec::Poison { n, d, noise_var, test_frac, poison_ratio, seed, params } => {
                let (ds, _) = gen_poison_data(*seed, *n, *d, *noise_var)?;
                let split = split_poison(&ds, *seed, *test_frac, *poison_ratio)?;
                ProblemInstance::Poison(PoisonProblem::new(split, params.clone())?)
            }
        })
    }
}

/// A constructed problem of any supported kind.
pub enum ProblemInstance {
    Toy(ToyBilinearProblem),
    Logistic(RobustLogisticProblem),
    Poison(PoisonProblem),
}

impl ProblemInstance {
    pub fn problem(&self) -> &dyn MinimaxProblem {
        match self {
            ProblemInstance::Toy(p) => p,
            ProblemInstance::Logistic(p) => p,
            ProblemInstance::Poison(p) => p,
        }
    }
}

/// Scheme as written in a config; ZeroSARAH may give `a` instead of a
/// batch size, with `b = ⌈a√n⌉`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SchemeSpec {
    Pvr {
        p: f64,
        #[serde(default)]
        batch: Option<usize>,
    },
    ZeroSarah {
        #[serde(default)]
        batch: Option<usize>,
        #[serde(default)]
        a: Option<f64>,
        #[serde(default)]
        lambda: Option<f64>,
        #[serde(default)]
        init: ZeroSarahInit,
    },
    StocGda {
        #[serde(default)]
        batch: Option<usize>,
    },
    VrAgda {
        #[serde(default)]
        batch: Option<usize>,
        #[serde(default)]
        snapshot_period: Option<usize>,
    },
}

/// How step sizes are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum StepRule {
    /// The bounds of the step-size calculators. With `rho_c`,
    /// `ρ = min(rho_c/√T, bound)`.
    Theory {
        #[serde(default)]
        rho_c: Option<f64>,
    },
    Manual {
        eta_x: f64,
        eta_y: f64,
        #[serde(default = "one_f64")]
        rho: f64,
    },
}

fn one_f64() -> f64 {
    1.0
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule::Theory { rho_c: None }
    }
}

/// One solver entry of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSpec {
    /// File-name label; defaults to the scheme label.
    #[serde(default)]
    pub name: Option<String>,
    pub scheme: SchemeSpec,
    #[serde(default)]
    pub steps: StepRule,
    /// Defaults to 1000.
    #[serde(default)]
    pub iterations: Option<usize>,
    /// Stop once this many oracle units are spent.
    #[serde(default)]
    pub oracle_budget: Option<u64>,
    /// Defaults to `2·max(L, 1)` for the smoothed schemes.
    #[serde(default)]
    pub r: Option<f64>,
    #[serde(default)]
    pub coupling: BatchCoupling,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub y0: Option<Vec<f64>>,
    /// Overrides the experiment-wide cadence.
    #[serde(default)]
    pub trace_every: Option<usize>,
    /// Overrides the experiment-wide diagnostics.
    #[serde(default)]
    pub diagnostics: Option<Diagnostics>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_trace_every() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub solvers: Vec<SolverSpec>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Overridden by `NCC_SEED`.
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_trace_every")]
    pub trace_every: usize,
    #[serde(default)]
    pub diagnostics: Diagnostics,
    /// Rebuild the problem for every seed with its seed offset by the run
    /// seed (fresh synthetic data per seed).
    #[serde(default)]
    pub problem_per_seed: bool,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub workers: Option<usize>,
    /// Write wall-clock seconds into the traces (breaks byte-identical reruns).
    #[serde(default)]
    pub write_wall_time: bool,
    /// Residual thresholds for the oracle-to-threshold summary columns.
    #[serde(default)]
    pub thresholds: Option<Vec<f64>>,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<ExperimentConfig, HarnessError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|source| HarnessError::Json { path: path.to_path_buf(), source })
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.solvers.is_empty() {
            return Err(HarnessError::Config("at least one solver is required".into()));
        }
        if self.seeds.is_empty() {
            return Err(HarnessError::Config("at least one seed is required".into()));
        }
        if self.trace_every == 0 {
            return Err(HarnessError::Config("trace_every must be at least 1".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for s in &self.seeds {
            if !seen.insert(s) {
                return Err(HarnessError::Config(format!("seed {s} listed twice")));
            }
        }
        if let Some(path) = self.problem.data_file() {
            if !path.is_file() {
                return Err(HarnessError::Config(format!("data file {} does not exist", path.display())));
            }
        }
        Ok(())
    }

    /// The master seed after the environment override.
    pub fn effective_master_seed(&self) -> Result<u64, HarnessError> {
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| HarnessError::Config(format!("{SEED_ENV}={v} is not an unsigned integer"))),
            Err(_) => Ok(self.master_seed),
        }
    }

    /// Unique file labels, one per solver entry.
    pub fn solver_labels(&self) -> Vec<String> {
        let base: Vec<String> = self
            .solvers
            .iter()
            .map(|s| s.name.clone().unwrap_or_else(|| resolve_scheme_label(&s.scheme).into()))
            .collect();
        base.iter()
            .enumerate()
            .map(|(i, b)| if base.iter().filter(|o| *o == b).count() > 1 { format!("{b}_{i}") } else { b.clone() })
            .collect()
    }
}

fn resolve_scheme_label(s: &SchemeSpec) -> &'static str {
    match s {
        SchemeSpec::Pvr { .. } => "pvr_sgda",
        SchemeSpec::ZeroSarah { .. } => "zerosarah_sgda",
        SchemeSpec::StocGda { .. } => "stocgda",
        SchemeSpec::VrAgda { .. } => "vr_agda",
    }
}

/// A solver entry turned into a concrete config for one problem.
#[derive(Debug, Clone, Serialize)]
pub struct ResolvedSolver {
    pub config: SolverConfig,
    /// The calculator output when theory step sizes were used.
    pub bounds: Option<serde_json::Value>,
    pub warnings: Vec<String>,
}

/// Fills defaults and step sizes of `spec` against `problem`.
pub fn resolve_solver(
    spec: &SolverSpec,
    problem: &dyn MinimaxProblem,
    trace_every: usize,
    diagnostics: &Diagnostics,
) -> Result<ResolvedSolver, HarnessError> {
    let n = problem.n();
    let l = problem.lipschitz();
    let default_batch = ((2.0 * (n as f64).sqrt()).ceil() as usize).clamp(1, n);
    let mut warnings = Vec::new();
    let scheme = match &spec.scheme {
        SchemeSpec::Pvr { p, batch } => Scheme::Pvr { p: *p, batch: batch.unwrap_or(1) },
        SchemeSpec::ZeroSarah { batch, a, lambda, init } => {
            let b = match (batch, a) {
                (Some(b), _) => *b,
                (None, Some(a)) => {
                    let (b, clamped) = theory::zerosarah_batch(n, *a);
                    if clamped {
                        warnings.push(format!("a√n exceeds n = {n}; batch clamped to n"));
                    }
                    b
                }
                (None, None) => theory::zerosarah_batch(n, 2.0).0,
            };
            Scheme::ZeroSarah { batch: b, lambda: *lambda, init: *init }
        }
        SchemeSpec::StocGda { batch } => Scheme::StocGda { batch: batch.unwrap_or(default_batch) },
        SchemeSpec::VrAgda { batch, snapshot_period } => {
            Scheme::VrAgda { batch: batch.unwrap_or(default_batch), snapshot_period: *snapshot_period }
        }
    };
    let iterations = spec.iterations.unwrap_or(1000);
    let r = if scheme.is_smoothed() { spec.r.unwrap_or(2.0 * l.max(1.0)) } else { 0.0 };
    let dy = problem.set_y().diameter();
    let (eta_x, eta_y, rho, bounds) = match &spec.steps {
        StepRule::Manual { eta_x, eta_y, rho } => (*eta_x, *eta_y, *rho, None),
        StepRule::Theory { rho_c } => {
            let b = match &scheme {
                Scheme::Pvr { p, .. } => theory::pvr_step_sizes(l, *p, r, dy)?,
                Scheme::ZeroSarah { batch, .. } => {
                    // The calculator takes `a`; recover it from the batch.
                    let a = match &spec.scheme {
                        SchemeSpec::ZeroSarah { a: Some(a), .. } => *a,
                        _ => (*batch as f64 / (n as f64).sqrt()).max(2.0),
                    };
                    theory::zerosarah_step_sizes(l, n, a, r, dy)?
                }
                _ => {
                    return Err(HarnessError::Config(format!(
                        "theory step sizes exist only for the smoothed schemes, not {}",
                        scheme.label()
                    )))
                }
            };
            warnings.extend(b.warnings.iter().cloned());
            let rho = match rho_c {
                Some(c) => (c / (iterations as f64).sqrt()).min(b.rho),
                None => b.rho,
            };
            let value = serde_json::to_value(&b).expect("bounds serialize");
            (b.eta_x, b.eta_y, rho, Some(value))
        }
    };
    let mut config = SolverConfig::new(eta_x, eta_y, rho, r, scheme, iterations);
    config.trace_every = spec.trace_every.unwrap_or(trace_every);
    config.coupling = spec.coupling;
    config.diagnostics = spec.diagnostics.clone().unwrap_or_else(|| diagnostics.clone());
    config.oracle_budget = spec.oracle_budget;
    let start = solvers::initial_point(problem, &SolverConfig { x0: spec.x0.clone(), y0: spec.y0.clone(), ..config.clone() });
    config.x0 = Some(start.x);
    config.y0 = Some(start.y);
    config.validate(problem)?;
    Ok(ResolvedSolver { config, bounds, warnings })
}

/// Everything needed to reproduce one run; written next to its trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: u32,
    pub solver: String,
    pub scheme: String,
    pub seed: u64,
    pub master_seed: u64,
    pub run_id: u64,
    pub trace_file: String,
    pub problem_spec: ProblemSpec,
    pub problem: serde_json::Value,
    pub solver_spec: SolverSpec,
    pub resolved: SolverConfig,
    pub theory_bounds: Option<serde_json::Value>,
    pub surrogate_bounds: serde_json::Value,
    pub data_source: String,
    pub warnings: Vec<String>,
    pub iterations_run: usize,
    pub oracle_count: u64,
    pub diag_oracle_count: u64,
    pub heads: u64,
    pub best_t: usize,
    pub best_residual: f64,
    pub final_residual: f64,
    pub final_primal: Option<f64>,
    pub final_accuracy: Option<f64>,
    pub wall_s: f64,
    pub finished_unix_s: u64,
}

/// Where one run's files went.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub solver: String,
    pub seed: u64,
    pub trace: PathBuf,
    pub manifest: PathBuf,
}

fn data_source(spec: &ProblemSpec) -> String {
    match spec {
        ProblemSpec::RobustLogistic { .. } => match spec.data_file() {
            Some(p) => format!("libsvm:{}", p.display()),
            None => "synthetic a9a-like".into(),
        },
        ProblemSpec::Poison { .. } => "synthetic poisoning generator".into(),
        ProblemSpec::ToyBilinear(_) => "synthetic toy".into(),
    }
}

/// Runs every `(solver, seed)` pair and writes one trace CSV and one JSON
/// manifest per run into `out_dir`. All inputs are loaded and resolved
/// before any file is written.
pub fn run_experiment(
    config: &ExperimentConfig,
    out_dir: &Path,
    workers: Option<usize>,
) -> Result<Vec<RunOutcome>, HarnessError> {
    config.validate()?;
    let master_seed = config.effective_master_seed()?;
    let labels = config.solver_labels();

    let seed_specs: Vec<(u64, ProblemSpec)> = config
        .seeds
        .iter()
        .map(|&s| (s, if config.problem_per_seed { config.problem.with_seed_offset(s) } else { config.problem.clone() }))
        .collect();
    let shared = if config.problem_per_seed { None } else { Some(config.problem.build()?) };
    let per_seed: Vec<Option<ProblemInstance>> = if config.problem_per_seed {
        seed_specs.iter().map(|(_, s)| s.build().map(Some)).collect::<Result<_, _>>()?
    } else {
        seed_specs.iter().map(|_| None).collect()
    };

    struct Job<'a> {
        label: &'a str,
        spec: &'a SolverSpec,
        seed: u64,
        run_id: u64,
        problem_spec: &'a ProblemSpec,
        instance: &'a ProblemInstance,
        resolved: ResolvedSolver,
    }
    let mut jobs = Vec::new();
    for (si, (seed, pspec)) in seed_specs.iter().enumerate() {
        let instance = per_seed[si].as_ref().or(shared.as_ref()).expect("problem built");
        for (k, spec) in config.solvers.iter().enumerate() {
            let mut resolved = resolve_solver(spec, instance.problem(), config.trace_every, &config.diagnostics)?;
            let run_id = (seed << 16) | k as u64;
            resolved.config.seed = master_seed;
            resolved.config.stream = run_id;
            jobs.push(Job {
                label: &labels[k],
                spec,
                seed: *seed,
                run_id,
                problem_spec: pspec,
                instance,
                resolved,
            });
        }
    }

    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let execute = |job: &Job<'_>| -> Result<RunOutcome, HarnessError> {
        let problem = job.instance.problem();
        let started = Instant::now();
        let result = solvers::run(problem, &job.resolved.config)?;
        let wall_s = started.elapsed().as_secs_f64();
        let stem = format!("{}__seed{}", job.label, job.seed);
        let trace_path = out_dir.join(format!("{stem}.csv"));
        let manifest_path = out_dir.join(format!("{stem}.json"));
        let with_accuracy = result.trace.first().is_some_and(|r| r.accuracy.is_some());
        write_trace(&trace_path, &result.trace, with_accuracy, config.write_wall_time)?;
        let last = result.trace.last().expect("final record");
        let (sx, sy) = problem.surrogate_bounds();
        let mut warnings = job.resolved.warnings.clone();
        warnings.extend(result.warnings.iter().cloned());
        let manifest = Manifest {
            schema: CSV_SCHEMA,
            solver: job.label.to_string(),
            scheme: job.resolved.config.scheme.label().into(),
            seed: job.seed,
            master_seed,
            run_id: job.run_id,
            trace_file: format!("{stem}.csv"),
            problem_spec: job.problem_spec.clone(),
            problem: problem.describe(),
            solver_spec: job.spec.clone(),
            resolved: job.resolved.config.clone(),
            theory_bounds: job.resolved.bounds.clone(),
            surrogate_bounds: json!({
                "x_is_surrogate": sx,
                "y_is_surrogate": sy,
                "set_x": problem.set_x(),
                "set_y": problem.set_y(),
            }),
            data_source: data_source(job.problem_spec),
            warnings,
            iterations_run: last.t,
            oracle_count: result.oracle_count,
            diag_oracle_count: result.diag_oracle_count,
            heads: result.heads,
            best_t: result.best.t,
            best_residual: result.best.residual,
            final_residual: last.residual(),
            final_primal: last.primal,
            final_accuracy: last.accuracy,
            wall_s,
            finished_unix_s: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        };
        let text = serde_json::to_string_pretty(&manifest)
            .map_err(|source| HarnessError::Json { path: manifest_path.clone(), source })?;
        fs::write(&manifest_path, text).map_err(io_err(&manifest_path))?;
        Ok(RunOutcome { solver: job.label.to_string(), seed: job.seed, trace: trace_path, manifest: manifest_path })
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.or(config.workers).unwrap_or(0))
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    let results: Vec<Result<RunOutcome, HarnessError>> = pool.install(|| jobs.par_iter().map(execute).collect());
    let mut done = Vec::new();
    let mut failed = Vec::new();
    for (job, r) in jobs.iter().zip(results) {
        match r {
            Ok(o) => done.push(o),
            Err(e) => failed.push(format!("{} seed {}: {e}", job.label, job.seed)),
        }
    }
    if !failed.is_empty() {
        return Err(HarnessError::RunsFailed(failed));
    }
    Ok(done)
}
