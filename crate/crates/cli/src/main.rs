//! Command-line front end: simulate datasets, fit estimators, run the Monte
//! Carlo benchmark and inspect result files.
//!
//! Exit status is 0 on success, 1 for invalid input and 2 for numeric
//! failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lebid::domain::{load_dataset, save_dataset};
use lebid::harness::{
    self, emit_results, estimate_baseline, estimate_lebesgue, read_runs_csv, run_case_study,
    simulate_run, summarize_rows, Summary,
};
use lebid::{Dataset, Error, Estimator, ExperimentConfig, PointSource, Result};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "lebid", version, about = "Impulse response estimation from Lebesgue-sampled data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one run and write its dataset.
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Run index; selects the input and noise streams.
        #[arg(long, default_value_t = 0)]
        run_id: u64,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Fit one estimator to a dataset and write the estimate.
    Estimate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, short)]
        dataset: PathBuf,
        #[arg(long, short, default_value = "leb")]
        estimator: Estimator,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Run the Monte Carlo case study and write runs.csv, summary.json and traces.
    Benchmark {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, short)]
        out: PathBuf,
        /// Record wall times (makes runs.csv differ between re-runs).
        #[arg(long)]
        timing: bool,
    },
    /// Summarize a dataset (.json) or a results file (runs.csv).
    Inspect { path: PathBuf },
}

/// A JSON config file, with individual fields overridable by flags.
#[derive(Args)]
struct ConfigArgs {
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    n_runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    total_time: Option<f64>,
    #[arg(long)]
    input_scale: Option<f64>,
    #[arg(long)]
    noise_std: Option<f64>,
    #[arg(long)]
    em_iters: Option<usize>,
    #[arg(long)]
    q_samples: Option<usize>,
    #[arg(long)]
    mstep_budget: Option<usize>,
    /// Comma-separated subset of leb, rie, or.
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<Estimator>>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
                    path: path.clone(),
                    source,
                })?;
                serde_json::from_str(&text).map_err(|source| Error::Parse {
                    path: path.clone(),
                    source,
                })?
            }
            None => ExperimentConfig::default(),
        };
        macro_rules! apply {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    cfg.$field = v.clone();
                }
            )*};
        }
        apply!(n_runs, seed, total_time, input_scale, noise_std, em_iters, q_samples, mstep_budget, estimators);
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Serialize)]
struct EstimateFile {
    estimate: harness::ImpulseEstimate,
    t_grid: Vec<f64>,
    impulse: Vec<f64>,
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let body = serde_json::to_vec_pretty(value)
        .map_err(|e| Error::Numeric(format!("json encoding: {e}")))?;
    std::fs::write(path, body).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn estimate(ds: &Dataset, cfg: &ExperimentConfig, e: Estimator) -> Result<harness::ImpulseEstimate> {
    match e {
        Estimator::Leb => estimate_lebesgue(ds, cfg, cfg.seed).map(|(est, _, _)| est),
        Estimator::Rie => estimate_baseline(ds, cfg, PointSource::Midpoint),
        Estimator::Or => estimate_baseline(ds, cfg, PointSource::Oracle),
    }
}

fn print_summary(s: &Summary) {
    println!("runs: {}  mean N_L: {:.2}", s.n_runs, s.mean_n_events);
    println!("estimator  count  failures      mean    median        q1        q3");
    for (e, f) in &s.estimators {
        println!(
            "{:<9}  {:>5}  {:>8}  {:>8.2}  {:>8.2}  {:>8.2}  {:>8.2}",
            e.name(),
            f.count,
            f.failures,
            f.mean,
            f.median,
            f.q1,
            f.q3
        );
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { cfg, run_id, out } => {
            let cfg = cfg.resolve()?;
            let sim = simulate_run(&cfg, run_id)?;
            save_dataset(&sim.dataset, &out)?;
            println!(
                "wrote {}: N = {}, N_L = {}",
                out.display(),
                sim.dataset.n(),
                sim.events.len()
            );
        }
        Command::Estimate {
            cfg,
            dataset,
            estimator,
            out,
        } => {
            let cfg = cfg.resolve()?;
            let ds = load_dataset(&dataset)?;
            let est = estimate(&ds, &cfg, estimator)?;
            let t_grid = cfg.impulse_grid();
            let impulse = est.impulse(&ds.input, ds.delta(), &t_grid)?;
            let rho = est.rho;
            write_json(&EstimateFile { estimate: est, t_grid, impulse }, &out)?;
            println!(
                "{estimator}: gamma = {:.4e}, beta = {:.4e}, sigma2 = {:.4e}; wrote {}",
                rho.gamma,
                rho.beta,
                rho.sigma2,
                out.display()
            );
        }
        Command::Benchmark { cfg, out, timing } => {
            let mut cfg = cfg.resolve()?;
            cfg.record_timing |= timing;
            let (results, traces, summary) = run_case_study(&cfg)?;
            emit_results(&results, &traces, &summary, &out)?;
            print_summary(&summary);
            println!("results in {}", out.display());
        }
        Command::Inspect { path } => {
            if path.extension().is_some_and(|e| e == "csv") {
                print_summary(&summarize_rows(&read_runs_csv(&path)?));
            } else {
                let ds = load_dataset(&path)?;
                let n_events = ds.events.as_ref().map_or(0, Vec::len);
                let (lo, hi) = ds
                    .bands
                    .eta
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &e| (a.min(e), b.max(e)));
                println!("N = {}, delta = {}, h = {}", ds.n(), ds.delta(), ds.bands.h);
                println!(
                    "input: {} holds of {} s; band levels {lo} to {}",
                    ds.input.amplitudes.len(),
                    ds.input.delta_u,
                    hi + ds.bands.h
                );
                println!(
                    "events: {n_events}; oracle output: {}",
                    if ds.oracle_z.is_some() { "present" } else { "absent" }
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // usage errors share the invalid-input status
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numeric() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
