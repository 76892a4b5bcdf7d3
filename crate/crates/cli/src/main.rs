use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use ncc_core::data::{gen_poison_data, write_libsvm};
use ncc_core::harness::{self, ExperimentConfig, Suite, SuiteOptions, DEFAULT_THRESHOLDS};
use ncc_core::theory;

#[derive(Parser)]
#[command(name = "ncc", version, about = "Variance-reduced smoothed GDA for nonconvex-concave minimax problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (solver, seed) pair of an experiment config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to the config's `out_dir`, then `runs/`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Summarize the runs in a directory and write `summary.csv` there.
    Compare {
        #[arg(long)]
        dir: PathBuf,
        /// Residual thresholds for the oracle-count columns.
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
    },
    /// Run a Monte-Carlo verification suite and print its JSON report.
    Check {
        #[arg(long, value_enum)]
        suite: SuiteArg,
        #[arg(long, default_value_t = 100_000)]
        draws: usize,
        #[arg(long, default_value_t = 100)]
        replicas: usize,
        #[arg(long, default_value_t = 1000)]
        inputs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic data set in LIBSVM format.
    GenData {
        #[arg(long, value_enum)]
        task: Task,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 100)]
        d: usize,
        #[arg(long, default_value_t = 1e-3)]
        noise_var: f64,
    },
    /// Print the step-size bounds of a smoothed scheme as JSON.
    Params {
        #[arg(long, value_enum)]
        scheme: SchemeArg,
        /// Lipschitz constant of the components.
        #[arg(long = "L")]
        l: f64,
        /// PVR full-gradient probability.
        #[arg(long)]
        p: Option<f64>,
        /// ZeroSARAH component count.
        #[arg(long)]
        n: Option<usize>,
        /// ZeroSARAH batch factor, b = ⌈a√n⌉.
        #[arg(long)]
        a: Option<f64>,
        /// Smoothing weight; defaults to 2·max(L, 1).
        #[arg(long)]
        r: Option<f64>,
        /// Diameter of the dual set; defaults to √2 (probability simplex).
        #[arg(long)]
        dy: Option<f64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Estimators,
    Descent,
    Projections,
}

#[derive(Clone, Copy, ValueEnum)]
enum Task {
    Poison,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Pvr,
    Zerosarah,
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { config, out, workers } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            let dir = out.or_else(|| cfg.out_dir.clone()).unwrap_or_else(|| PathBuf::from("runs"));
            let done = harness::run_experiment(&cfg, &dir, workers)?;
            for o in &done {
                log::info!("{} seed {} -> {}", o.solver, o.seed, o.trace.display());
            }
            println!("{} run(s) written to {}", done.len(), dir.display());
            Ok(true)
        }
        Command::Compare { dir, thresholds } => {
            let thresholds = thresholds.unwrap_or_else(|| DEFAULT_THRESHOLDS.to_vec());
            let summary = harness::compare(&dir, &thresholds)?;
            let csv = dir.join("summary.csv");
            fs::write(&csv, summary.to_csv()).with_context(|| format!("writing {}", csv.display()))?;
            print!("{}", summary.to_table());
            Ok(true)
        }
        Command::Check { suite, draws, replicas, inputs, seed, out } => {
            let suite = match suite {
                SuiteArg::Estimators => Suite::Estimators,
                SuiteArg::Descent => Suite::Descent,
                SuiteArg::Projections => Suite::Projections,
            };
            let report = harness::run_suite(suite, &SuiteOptions { draws, replicas, inputs, seed })?;
            write_or_print(out.as_deref(), &serde_json::to_string_pretty(&report)?)?;
            for item in report.items.iter().filter(|i| !i.passed) {
                eprintln!("FAILED {}", item.name);
            }
            Ok(report.passed)
        }
        Command::GenData { task: Task::Poison, seed, out, n, d, noise_var } => {
            let (ds, _) = gen_poison_data(seed, n, d, noise_var)?;
            let file = fs::File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            write_libsvm(&ds, std::io::BufWriter::new(file))?;
            Ok(true)
        }
        Command::Params { scheme, l, p, n, a, r, dy } => {
            let r = r.unwrap_or(2.0 * l.max(1.0));
            let dy = dy.unwrap_or(std::f64::consts::SQRT_2);
            let bounds = match scheme {
                SchemeArg::Pvr => {
                    let Some(p) = p else { bail!("--scheme pvr needs --p") };
                    theory::pvr_step_sizes(l, p, r, dy)?
                }
                SchemeArg::Zerosarah => {
                    let (Some(n), Some(a)) = (n, a) else { bail!("--scheme zerosarah needs --n and --a") };
                    theory::zerosarah_step_sizes(l, n, a, r, dy)?
                }
            };
            println!("{}", serde_json::to_string_pretty(&bounds)?);
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
