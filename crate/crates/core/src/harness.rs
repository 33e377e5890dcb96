//! End-to-end pipelines and the Monte Carlo case study.
//!
//! Three estimators are compared on every simulated run:
//!
//! * `leb`: empirical Bayes on the bands, then MAP-EM weights;
//! * `rie`: band midpoints treated as exact data;
//! * `or`: the noisy output before quantization (not available in practice).

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{
    is_multiple, write_atomic, BandSequence, Dataset, Hyperparameters, SamplingConfig, ZohInput,
};
use crate::error::{Error, Result};
use crate::hyper_eb::{self, EbOptions, EbTrace, GramBuilder, MomentMode};
use crate::kernel;
use crate::lebesgue::{self, CrossingEvent};
use crate::lti_sim::{self, SecondOrderPlant};
use crate::rng;
use crate::truncgauss::{BandConstraint, SamplerConfig};
use crate::weights::{self, WeightSolution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Leb,
    Rie,
    Or,
}

impl Estimator {
    pub const ALL: [Estimator; 3] = [Estimator::Leb, Estimator::Rie, Estimator::Or];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Leb => "leb",
            Estimator::Rie => "rie",
            Estimator::Or => "or",
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "leb" => Ok(Estimator::Leb),
            "rie" => Ok(Estimator::Rie),
            "or" => Ok(Estimator::Or),
            other => Err(Error::Validation(format!(
                "unknown estimator {other:?} (expected leb, rie or or)"
            ))),
        }
    }
}

/// Point data used by a baseline estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointSource {
    Midpoint,
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub plant: SecondOrderPlant,
    pub total_time: f64,
    pub sampling: SamplingConfig,
    pub delta_u: f64,
    /// Standard deviation of the ZOH input amplitudes. The default of 3 puts
    /// the mean event count near 69 per 30 s record for the default plant.
    pub input_scale: f64,
    pub noise_std: f64,
    pub n_runs: usize,
    pub seed: u64,
    pub em_iters: usize,
    pub q_samples: usize,
    pub q_burn_in: usize,
    pub mstep_budget: usize,
    pub weight_iters: usize,
    pub weight_tol: f64,
    pub estimators: Vec<Estimator>,
    /// Write measured wall times; when off the column is zero so that
    /// identical configurations give identical files.
    pub record_timing: bool,
    /// Horizon and resolution of the impulse responses stored in traces.
    pub impulse_horizon: f64,
    pub impulse_points: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            plant: SecondOrderPlant::default(),
            total_time: 30.0,
            sampling: SamplingConfig::default(),
            delta_u: 3.0,
            input_scale: 3.0,
            noise_std: 0.05,
            n_runs: 100,
            seed: 0,
            em_iters: 40,
            q_samples: 1000,
            q_burn_in: 200,
            mstep_budget: 200,
            weight_iters: 40,
            weight_tol: 1e-6,
            estimators: Estimator::ALL.to_vec(),
            record_timing: false,
            impulse_horizon: 5.0,
            impulse_points: 501,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.plant.validate()?;
        self.sampling.validate()?;
        let check = |ok: bool, msg: String| if ok { Ok(()) } else { Err(Error::Validation(msg)) };
        check(
            self.total_time > 0.0 && is_multiple(self.total_time, self.sampling.delta),
            format!(
                "total_time = {} is not a positive multiple of delta = {}",
                self.total_time, self.sampling.delta
            ),
        )?;
        check(
            self.delta_u > 0.0 && is_multiple(self.delta_u, self.sampling.delta),
            format!(
                "delta_u = {} is not a positive multiple of delta = {}",
                self.delta_u, self.sampling.delta
            ),
        )?;
        check(
            self.noise_std >= 0.0 && self.noise_std.is_finite(),
            format!("noise_std must be non-negative, got {}", self.noise_std),
        )?;
        check(
            self.input_scale.is_finite(),
            format!("input_scale must be finite, got {}", self.input_scale),
        )?;
        check(self.em_iters >= 1, "em_iters must be at least 1".into())?;
        check(self.q_samples >= 1, "q_samples must be at least 1".into())?;
        check(self.mstep_budget >= 1, "mstep_budget must be at least 1".into())?;
        check(self.weight_iters >= 1, "weight_iters must be at least 1".into())?;
        check(
            self.weight_tol > 0.0,
            format!("weight_tol must be positive, got {}", self.weight_tol),
        )?;
        check(
            self.impulse_horizon > 0.0 && self.impulse_points >= 2,
            "impulse grid needs a positive horizon and at least two points".into(),
        )?;
        let mut seen = self.estimators.clone();
        seen.sort();
        seen.dedup();
        check(
            seen.len() == self.estimators.len(),
            "estimators must not repeat".into(),
        )
    }

    /// Number of output samples N.
    pub fn n(&self) -> usize {
        (self.total_time / self.sampling.delta).round() as usize
    }

    fn n_amplitudes(&self) -> usize {
        (self.total_time / self.delta_u - 1e-9).ceil().max(1.0) as usize
    }

    pub fn impulse_grid(&self) -> Vec<f64> {
        let m = self.impulse_points - 1;
        (0..=m)
            .map(|k| self.impulse_horizon * k as f64 / m as f64)
            .collect()
    }

    fn eb_options(&self, seed: u64) -> EbOptions {
        EbOptions {
            em_iters: self.em_iters,
            sampler: SamplerConfig {
                n_samples: self.q_samples,
                burn_in: self.q_burn_in,
                seed,
            },
            moments: MomentMode::Sampled,
            mstep_budget: self.mstep_budget,
        }
    }
}

/// One simulated experiment with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedRun {
    pub dataset: Dataset,
    /// Noiseless output at t = iΔ, i = 1..N.
    pub x_true: Vec<f64>,
    pub events: Vec<CrossingEvent>,
}

/// Simulates run `run_id`: random ZOH input, plant response on the fine grid,
/// i.i.d. noise at the Δ grid held across each period, Lebesgue sampling.
pub fn simulate_run(cfg: &ExperimentConfig, run_id: u64) -> Result<SimulatedRun> {
    cfg.validate()?;
    let mut input_rng = rng::stream(rng::derive_tagged(cfg.seed, "input", run_id));
    let amplitudes: Vec<f64> = (0..cfg.n_amplitudes())
        .map(|_| cfg.input_scale * input_rng.sample::<f64, _>(StandardNormal))
        .collect();
    let input = ZohInput::new(cfg.delta_u, amplitudes)?;

    let n = cfg.n();
    let s = cfg.sampling.sim_substeps;
    let ss = lti_sim::plant_to_ss(&cfg.plant)?;
    let x_fine = lti_sim::simulate_noiseless(&ss, &input, cfg.sampling.fine_step(), n * s)?;

    let mut noise_rng = rng::stream(rng::derive_tagged(cfg.seed, "noise", run_id));
    let noise: Vec<f64> = (0..=n)
        .map(|_| cfg.noise_std * noise_rng.sample::<f64, _>(StandardNormal))
        .collect();
    let z_fine: Vec<f64> = x_fine
        .iter()
        .enumerate()
        .map(|(k, x)| x + noise[k / s])
        .collect();

    let events = lebesgue::detect_events(&z_fine, cfg.sampling.fine_step(), cfg.sampling.h);
    let bands = lebesgue::band_sequence(&z_fine, &cfg.sampling);
    let oracle_z: Vec<f64> = (1..=n).map(|i| z_fine[i * s]).collect();
    let x_true: Vec<f64> = (1..=n).map(|i| x_fine[i * s]).collect();
    let dataset = Dataset {
        input,
        bands,
        oracle_z: Some(oracle_z),
        events: Some(events.iter().map(|e| (e.t, e.value)).collect()),
    };
    dataset.validate()?;
    Ok(SimulatedRun {
        dataset,
        x_true,
        events,
    })
}

/// `100 (1 - ‖x̂ - x‖ / ‖x - x̄‖)`.
pub fn fit_metric(x_hat: &[f64], x: &[f64]) -> Result<f64> {
    if x_hat.len() != x.len() {
        return Err(Error::LengthMismatch {
            what: "estimate",
            got: x_hat.len(),
            expected: x.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::Validation("fit needs at least two samples".into()));
    }
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let den = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>().sqrt();
    if den == 0.0 {
        return Err(Error::Validation(
            "fit is undefined for a constant reference signal".into(),
        ));
    }
    let num = x_hat
        .iter()
        .zip(x)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(100.0 * (1.0 - num / den))
}

/// Weights and hyperparameters of one estimator on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpulseEstimate {
    pub estimator: Estimator,
    pub rho: Hyperparameters,
    pub c: Vec<f64>,
    /// `K c`: the predicted noiseless output at t = iΔ.
    pub predicted: Vec<f64>,
}

impl ImpulseEstimate {
    pub fn impulse(&self, input: &ZohInput, delta: f64, t_grid: &[f64]) -> Result<Vec<f64>> {
        kernel::reconstruct_impulse(&self.c, input, delta, self.rho.beta, t_grid)
    }
}

fn finish(
    estimator: Estimator,
    gb: &GramBuilder,
    rho: Hyperparameters,
    c: Vec<f64>,
) -> Result<ImpulseEstimate> {
    let k = gb.gram(rho.beta)?;
    let predicted = (k.as_ref() * nalgebra::DVector::from_column_slice(&c))
        .as_slice()
        .to_vec();
    Ok(ImpulseEstimate {
        estimator,
        rho,
        c,
        predicted,
    })
}

/// Hyperparameters by empirical Bayes on the bands, then MAP-EM weights at
/// the final hyperparameters.
pub fn estimate_lebesgue(
    ds: &Dataset,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<(ImpulseEstimate, EbTrace, WeightSolution)> {
    ds.validate()?;
    let gb = GramBuilder::from_dataset(ds)?;
    let bands = BandConstraint::from_bands(&ds.bands);
    let rho_init = hyper_eb::default_rho_init(ds);
    let (rho, trace) = hyper_eb::eb_estimate_with(&gb, &bands, &rho_init, &cfg.eb_options(seed))?;
    let k = gb.gram(rho.beta)?;
    let sol = weights::map_em_weights(
        &k,
        &bands,
        rho.sigma2,
        rho.gamma,
        None,
        cfg.weight_iters,
        cfg.weight_tol,
    )?;
    let est = finish(Estimator::Leb, &gb, rho, sol.c.clone())?;
    Ok((est, trace, sol))
}

/// Treats point data as exact outputs: Gaussian marginal-likelihood
/// hyperparameters, then the ridge solution.
pub fn estimate_baseline(
    ds: &Dataset,
    cfg: &ExperimentConfig,
    source: PointSource,
) -> Result<ImpulseEstimate> {
    ds.validate()?;
    let (z, estimator) = match source {
        PointSource::Midpoint => (lebesgue::midpoint_data(&ds.bands), Estimator::Rie),
        PointSource::Oracle => (
            ds.oracle_z.clone().ok_or_else(|| {
                Error::Validation("oracle estimate requested but dataset has no oracle_z".into())
            })?,
            Estimator::Or,
        ),
    };
    let gb = GramBuilder::from_dataset(ds)?;
    let rho_init = hyper_eb::default_rho_init(ds);
    let rho = hyper_eb::point_data_eb(&z, &rho_init, &gb, cfg.mstep_budget)?;
    let k = gb.gram(rho.beta)?;
    let c = weights::regularized_ls(&k, &z, rho.gamma_tilde())?;
    finish(estimator, &gb, rho, c)
}

/// Result of one estimator on one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorOutcome {
    pub estimator: Estimator,
    pub fit: f64,
    pub rho: Option<Hyperparameters>,
    pub wall_time_s: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run_id: u64,
    /// Number of Lebesgue samples N_L, the initial one included.
    pub n_events: usize,
    pub n: usize,
    pub outcomes: Vec<EstimatorOutcome>,
}

impl RunResult {
    pub fn fit(&self, e: Estimator) -> Option<f64> {
        self.outcomes
            .iter()
            .find(|o| o.estimator == e && o.error.is_none())
            .map(|o| o.fit)
    }
}

/// Everything kept from one run for later inspection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub run_id: u64,
    pub input: ZohInput,
    pub bands: BandSequence,
    pub oracle_z: Vec<f64>,
    pub x_true: Vec<f64>,
    pub events: Vec<CrossingEvent>,
    pub t_grid: Vec<f64>,
    pub g_true: Vec<f64>,
    pub estimates: BTreeMap<Estimator, TracedEstimate>,
    pub eb_trace: Option<EbTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracedEstimate {
    pub rho: Hyperparameters,
    pub predicted: Vec<f64>,
    pub impulse: Vec<f64>,
}

fn failed_run(run_id: u64, cfg: &ExperimentConfig, err: &Error) -> RunResult {
    RunResult {
        run_id,
        n_events: 0,
        n: cfg.n(),
        outcomes: cfg
            .estimators
            .iter()
            .map(|&estimator| EstimatorOutcome {
                estimator,
                fit: f64::NAN,
                rho: None,
                wall_time_s: 0.0,
                error: Some(err.to_string()),
            })
            .collect(),
    }
}

/// Simulates and scores one run.
pub fn run_one(cfg: &ExperimentConfig, run_id: u64) -> (RunResult, Option<RunTrace>) {
    let sim = match simulate_run(cfg, run_id) {
        Ok(s) => s,
        Err(e) => return (failed_run(run_id, cfg, &e), None),
    };
    let ds = &sim.dataset;
    let t_grid = cfg.impulse_grid();
    let mut outcomes = Vec::with_capacity(cfg.estimators.len());
    let mut estimates = BTreeMap::new();
    let mut eb_trace = None;
    for &estimator in &cfg.estimators {
        let start = Instant::now();
        let result = match estimator {
            Estimator::Leb => {
                estimate_lebesgue(ds, cfg, rng::derive_tagged(cfg.seed, "eb", run_id)).map(
                    |(est, trace, _)| {
                        eb_trace = Some(trace);
                        est
                    },
                )
            }
            Estimator::Rie => estimate_baseline(ds, cfg, PointSource::Midpoint),
            Estimator::Or => estimate_baseline(ds, cfg, PointSource::Oracle),
        }
        .and_then(|est| {
            let fit = fit_metric(&est.predicted, &sim.x_true)?;
            let impulse = est.impulse(&ds.input, ds.delta(), &t_grid)?;
            Ok((est, fit, impulse))
        });
        let wall_time_s = if cfg.record_timing {
            start.elapsed().as_secs_f64()
        } else {
            0.0
        };
        match result {
            Ok((est, fit, impulse)) => {
                outcomes.push(EstimatorOutcome {
                    estimator,
                    fit,
                    rho: Some(est.rho),
                    wall_time_s,
                    error: None,
                });
                estimates.insert(
                    estimator,
                    TracedEstimate {
                        rho: est.rho,
                        predicted: est.predicted,
                        impulse,
                    },
                );
            }
            Err(e) => outcomes.push(EstimatorOutcome {
                estimator,
                fit: f64::NAN,
                rho: None,
                wall_time_s,
                error: Some(e.to_string()),
            }),
        }
    }
    let g_true = match lti_sim::plant_to_ss(&cfg.plant) {
        Ok(ss) => t_grid.iter().map(|&t| lti_sim::true_impulse(&ss, t)).collect(),
        Err(_) => Vec::new(),
    };
    let result = RunResult {
        run_id,
        n_events: sim.events.len(),
        n: ds.n(),
        outcomes,
    };
    let trace = RunTrace {
        run_id,
        input: ds.input.clone(),
        bands: ds.bands.clone(),
        oracle_z: ds.oracle_z.clone().unwrap_or_default(),
        x_true: sim.x_true,
        events: sim.events,
        t_grid,
        g_true,
        estimates,
        eb_trace,
    };
    (result, Some(trace))
}

/// Distribution of one estimator's fits across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub count: usize,
    pub failures: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n_runs: usize,
    pub mean_n_events: f64,
    pub estimators: BTreeMap<Estimator, FitSummary>,
}

/// Quantile by linear interpolation between order statistics.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn summarize_fits(fits: &[f64], failures: usize) -> FitSummary {
    let mut v: Vec<f64> = fits.to_vec();
    v.sort_by(f64::total_cmp);
    let mean = if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    };
    FitSummary {
        count: v.len(),
        failures,
        mean,
        median: quantile(&v, 0.5),
        q1: quantile(&v, 0.25),
        q3: quantile(&v, 0.75),
        min: v.first().copied().unwrap_or(f64::NAN),
        max: v.last().copied().unwrap_or(f64::NAN),
    }
}

pub fn summarize(results: &[RunResult]) -> Summary {
    let ok_runs: Vec<&RunResult> = results.iter().filter(|r| r.n_events > 0).collect();
    let mean_n_events = if ok_runs.is_empty() {
        f64::NAN
    } else {
        ok_runs.iter().map(|r| r.n_events as f64).sum::<f64>() / ok_runs.len() as f64
    };
    let mut per: BTreeMap<Estimator, (Vec<f64>, usize)> = BTreeMap::new();
    for r in results {
        for o in &r.outcomes {
            let entry = per.entry(o.estimator).or_default();
            if o.error.is_none() && o.fit.is_finite() {
                entry.0.push(o.fit);
            } else {
                entry.1 += 1;
            }
        }
    }
    Summary {
        n_runs: results.len(),
        mean_n_events,
        estimators: per
            .into_iter()
            .map(|(e, (fits, failures))| (e, summarize_fits(&fits, failures)))
            .collect(),
    }
}

/// Runs the Monte Carlo study, in parallel across runs. Results are ordered
/// by run id.
pub fn run_case_study(cfg: &ExperimentConfig) -> Result<(Vec<RunResult>, Vec<RunTrace>, Summary)> {
    cfg.validate()?;
    let mut pairs: Vec<(RunResult, Option<RunTrace>)> = (0..cfg.n_runs as u64)
        .into_par_iter()
        .map(|run_id| run_one(cfg, run_id))
        .collect();
    pairs.sort_by_key(|(r, _)| r.run_id);
    let (results, traces): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    let traces: Vec<RunTrace> = traces.into_iter().flatten().collect();
    let summary = summarize(&results);
    Ok((results, traces, summary))
}

/// One row of `runs.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub run_id: u64,
    pub estimator: Estimator,
    pub fit: f64,
    pub n_events: usize,
    pub gamma_hat: f64,
    pub beta_hat: f64,
    pub sigma2_hat: f64,
    pub wall_time_s: f64,
}

pub fn csv_rows(results: &[RunResult]) -> Vec<CsvRow> {
    results
        .iter()
        .flat_map(|r| {
            r.outcomes.iter().map(move |o| CsvRow {
                run_id: r.run_id,
                estimator: o.estimator,
                fit: o.fit,
                n_events: r.n_events,
                gamma_hat: o.rho.map_or(f64::NAN, |p| p.gamma),
                beta_hat: o.rho.map_or(f64::NAN, |p| p.beta),
                sigma2_hat: o.rho.map_or(f64::NAN, |p| p.sigma2),
                wall_time_s: o.wall_time_s,
            })
        })
        .collect()
}

pub const CSV_HEADER: [&str; 8] = [
    "run_id",
    "estimator",
    "fit",
    "n_events",
    "gamma_hat",
    "beta_hat",
    "sigma2_hat",
    "wall_time_s",
];

fn csv_bytes(results: &[RunResult]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for row in csv_rows(results) {
        w.serialize(row)?;
    }
    w.into_inner()
        .map_err(|e| Error::Numeric(format!("csv buffer: {e}")))
}

/// Reads `runs.csv` back into rows.
pub fn read_runs_csv(path: impl AsRef<Path>) -> Result<Vec<CsvRow>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for row in r.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

/// Summary statistics recomputed from CSV rows.
pub fn summarize_rows(rows: &[CsvRow]) -> Summary {
    let mut runs: BTreeMap<u64, usize> = BTreeMap::new();
    let mut per: BTreeMap<Estimator, (Vec<f64>, usize)> = BTreeMap::new();
    for row in rows {
        runs.insert(row.run_id, row.n_events);
        let entry = per.entry(row.estimator).or_default();
        if row.fit.is_finite() {
            entry.0.push(row.fit);
        } else {
            entry.1 += 1;
        }
    }
    let ok: Vec<f64> = runs.values().filter(|&&n| n > 0).map(|&n| n as f64).collect();
    Summary {
        n_runs: runs.len(),
        mean_n_events: if ok.is_empty() {
            f64::NAN
        } else {
            ok.iter().sum::<f64>() / ok.len() as f64
        },
        estimators: per
            .into_iter()
            .map(|(e, (fits, failures))| (e, summarize_fits(&fits, failures)))
            .collect(),
    }
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    serde_json::to_vec_pretty(value).map_err(|e| Error::Numeric(format!("json encoding: {e}")))
}

/// Writes `runs.csv`, `summary.json` and `traces/run_<k>.json` into `out_dir`.
pub fn emit_results(
    results: &[RunResult],
    traces: &[RunTrace],
    summary: &Summary,
    out_dir: impl AsRef<Path>,
) -> Result<()> {
    let dir = out_dir.as_ref();
    let trace_dir = dir.join("traces");
    std::fs::create_dir_all(&trace_dir).map_err(|e| Error::io(&trace_dir, e))?;
    write_atomic(&dir.join("runs.csv"), &csv_bytes(results)?)?;
    write_atomic(&dir.join("summary.json"), &json_bytes(summary)?)?;
    for t in traces {
        write_atomic(
            &trace_dir.join(format!("run_{}.json", t.run_id)),
            &json_bytes(t)?,
        )?;
    }
    Ok(())
}
