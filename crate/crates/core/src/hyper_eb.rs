//! Empirical-Bayes estimation of the hyperparameters `ρ = (γ, β, σ²)`.
//!
//! The band data are modelled as `z ~ N(0, S_ρ)` with `S_ρ = K_β/γ + σ²I`.
//! EM over the latent `z` alternates a second-moment E-step
//! `Q̄ = E[zzᵀ | bands, ρ]` with the M-step
//! `min_ρ ln det S_ρ + tr(S_ρ⁻¹ Q̄)`, solved by Nelder–Mead in `ln ρ`.

use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::domain::{Dataset, Hyperparameters, ZohInput};
use crate::error::{Error, Result};
use crate::kernel;
use crate::optim::NelderMead;
use crate::rng;
use crate::truncgauss::{self, BandConstraint, MomentEstimate, SamplerConfig};

const CACHE_CAPACITY: usize = 16;

/// Builds `K_β` for a fixed input, remembering recently used β values.
#[derive(Debug)]
pub struct GramBuilder {
    input: ZohInput,
    delta: f64,
    n: usize,
    cache: Mutex<Vec<(u64, Arc<DMatrix<f64>>)>>,
}

impl GramBuilder {
    pub fn new(input: ZohInput, delta: f64, n: usize) -> Result<Self> {
        input.validate()?;
        input.hold_ratio(delta)?;
        Ok(Self {
            input,
            delta,
            n,
            cache: Mutex::new(Vec::new()),
        })
    }

    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        Self::new(ds.input.clone(), ds.delta(), ds.n())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn input(&self) -> &ZohInput {
        &self.input
    }

    pub fn gram(&self, beta: f64) -> Result<Arc<DMatrix<f64>>> {
        let key = beta.to_bits();
        if let Some((_, k)) = self.lock().iter().find(|(b, _)| *b == key) {
            return Ok(Arc::clone(k));
        }
        let k = Arc::new(kernel::gram_matrix(&self.input, self.delta, beta, self.n)?.k);
        let mut cache = self.lock();
        if cache.len() >= CACHE_CAPACITY {
            cache.remove(0);
        }
        cache.push((key, Arc::clone(&k)));
        Ok(k)
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Vec<(u64, Arc<DMatrix<f64>>)>> {
        self.cache.lock().unwrap_or_else(|e| e.into_inner())
    }
}

/// `S_ρ = K_β/γ + σ²I`.
pub fn marginal_cov(rho: &Hyperparameters, gb: &GramBuilder) -> Result<DMatrix<f64>> {
    rho.validate()?;
    let k = gb.gram(rho.beta)?;
    let mut s = k.as_ref() / rho.gamma;
    for i in 0..gb.n {
        s[(i, i)] += rho.sigma2;
    }
    Ok(s)
}

fn cholesky(s: DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let fallback = s.clone();
    s.cholesky().ok_or_else(|| Error::NotPositiveDefinite {
        context: "marginal covariance",
        min_eigenvalue: fallback.symmetric_eigenvalues().min(),
    })
}

fn log_det(l: &DMatrix<f64>) -> f64 {
    2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// `ln det S_ρ + tr(S_ρ⁻¹ Q̄)`.
pub fn mstep_objective(rho: &Hyperparameters, q_bar: &DMatrix<f64>, gb: &GramBuilder) -> Result<f64> {
    let chol = cholesky(marginal_cov(rho, gb)?)?;
    let x = chol.solve(q_bar);
    Ok(log_det(&chol.l()) + x.trace())
}

/// The M-step objective with `Q̄ = F Fᵀ` factored once, so that each
/// evaluation costs one Cholesky factorization and one triangular solve.
pub struct MstepProblem<'a> {
    gb: &'a GramBuilder,
    f: DMatrix<f64>,
}

impl<'a> MstepProblem<'a> {
    pub fn new(q_bar: &DMatrix<f64>, gb: &'a GramBuilder) -> Result<Self> {
        let n = gb.n;
        if q_bar.nrows() != n || q_bar.ncols() != n {
            return Err(Error::LengthMismatch {
                what: "second-moment matrix",
                got: q_bar.nrows(),
                expected: n,
            });
        }
        let eig = q_bar.clone().symmetric_eigen();
        let keep: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > 0.0).collect();
        let mut f = DMatrix::zeros(n, keep.len());
        for (col, &i) in keep.iter().enumerate() {
            let scale = eig.eigenvalues[i].sqrt();
            f.set_column(col, &(eig.eigenvectors.column(i) * scale));
        }
        Ok(Self { gb, f })
    }

    /// Rank-one problem `Q̄ = z zᵀ`, i.e. the Gaussian marginal likelihood of
    /// point data `z`.
    pub fn from_point_data(z: &[f64], gb: &'a GramBuilder) -> Result<Self> {
        if z.len() != gb.n {
            return Err(Error::LengthMismatch {
                what: "point data",
                got: z.len(),
                expected: gb.n,
            });
        }
        Ok(Self {
            gb,
            f: DMatrix::from_column_slice(z.len(), 1, z),
        })
    }

    pub fn eval(&self, rho: &Hyperparameters) -> Result<f64> {
        let chol = cholesky(marginal_cov(rho, self.gb)?)?;
        let l = chol.l();
        let y = l
            .solve_lower_triangular(&self.f)
            .ok_or_else(|| Error::Numeric("singular Cholesky factor".into()))?;
        Ok(log_det(&l) + y.norm_squared())
    }

    fn eval_log(&self, x: &[f64]) -> f64 {
        let rho = Hyperparameters::from_log(x);
        if rho.validate().is_err() {
            return f64::INFINITY;
        }
        self.eval(&rho).unwrap_or(f64::INFINITY)
    }

    /// Nelder–Mead over the coordinates of `ln ρ` marked free; the others
    /// stay at their starting values.
    pub fn minimize(
        &self,
        start: &Hyperparameters,
        nm: &NelderMead,
        free: [bool; 3],
    ) -> Result<(Hyperparameters, f64)> {
        start.validate()?;
        let base = start.to_log();
        let idx: Vec<usize> = (0..3).filter(|&i| free[i]).collect();
        let expand = |y: &[f64]| {
            let mut x = base;
            for (k, &i) in idx.iter().enumerate() {
                x[i] = y[k];
            }
            x
        };
        let y0: Vec<f64> = idx.iter().map(|&i| base[i]).collect();
        let m = nm.minimize(|y| self.eval_log(&expand(y)), &y0);
        let rho = Hyperparameters::from_log(&expand(&m.x));
        rho.validate()?;
        if !m.value.is_finite() {
            return Err(Error::Numeric(format!(
                "M-step objective not finite at {rho:?}"
            )));
        }
        Ok((rho, m.value))
    }
}

/// Optimizer settings for one M-step.
pub fn mstep_optimizer(budget: usize) -> NelderMead {
    NelderMead {
        scale: 0.2,
        max_evals: budget,
        f_tol: 1e-12,
        x_tol: 1e-3,
    }
}

/// Minimizes the M-step objective over `ln ρ`, warm-started at `rho_start`.
/// The returned point is never worse than the start.
pub fn optimize_mstep(
    q_bar: &DMatrix<f64>,
    rho_start: &Hyperparameters,
    gb: &GramBuilder,
    budget: usize,
) -> Result<Hyperparameters> {
    let problem = MstepProblem::new(q_bar, gb)?;
    let (rho, _) = problem.minimize(rho_start, &mstep_optimizer(budget), [true; 3])?;
    Ok(rho)
}

/// How the E-step second moment is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MomentMode {
    /// Gibbs sampling of the truncated Gaussian.
    Sampled,
    /// Closed form; only available for a single observation.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EbOptions {
    pub em_iters: usize,
    pub sampler: SamplerConfig,
    pub moments: MomentMode,
    pub mstep_budget: usize,
}

impl Default for EbOptions {
    fn default() -> Self {
        Self {
            em_iters: 40,
            sampler: SamplerConfig::default(),
            moments: MomentMode::Sampled,
            mstep_budget: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EbTrace {
    /// Starting point followed by the estimate after each iteration.
    pub rho_per_iter: Vec<Hyperparameters>,
    /// M-step objective at the new estimate, one per iteration.
    pub mstep_objective_per_iter: Vec<f64>,
    /// M-step objective at the previous estimate under the same `Q̄`.
    pub mstep_start_objective_per_iter: Vec<f64>,
    pub q_sampler_config: SamplerConfig,
    /// Sampler seed used at each iteration.
    pub seeds: Vec<u64>,
}

/// Starting hyperparameters: `σ² = h²/12`, `γ = 1`, `β = 1/Δ_u`.
pub fn default_rho_init(ds: &Dataset) -> Hyperparameters {
    Hyperparameters {
        gamma: 1.0,
        beta: 1.0 / ds.input.delta_u,
        sigma2: ds.bands.h * ds.bands.h / 12.0,
    }
}

fn exact_moment(s: &DMatrix<f64>, bx: &BandConstraint, seed: u64) -> Result<MomentEstimate> {
    if bx.len() != 1 {
        return Err(Error::Validation(format!(
            "exact moments need a single observation, got {}",
            bx.len()
        )));
    }
    let q = truncgauss::univariate_second_moment(s[(0, 0)], bx.lower[0], bx.upper[0]);
    let mean = truncgauss::trunc_norm_mean(0.0, s[(0, 0)].sqrt(), bx.lower[0], bx.upper[0]);
    Ok(MomentEstimate {
        q: DMatrix::from_element(1, 1, q),
        mean: DVector::from_element(1, mean),
        n_samples: 0,
        seed,
    })
}

/// EM over hyperparameters for band data.
pub fn eb_estimate_with(
    gb: &GramBuilder,
    bands: &BandConstraint,
    rho_init: &Hyperparameters,
    opts: &EbOptions,
) -> Result<(Hyperparameters, EbTrace)> {
    rho_init.validate()?;
    bands.validate()?;
    if opts.em_iters == 0 {
        return Err(Error::Validation("em_iters must be at least 1".into()));
    }
    if bands.len() != gb.n {
        return Err(Error::LengthMismatch {
            what: "bands",
            got: bands.len(),
            expected: gb.n,
        });
    }
    let nm = mstep_optimizer(opts.mstep_budget);
    let mut rho = *rho_init;
    let mut trace = EbTrace {
        rho_per_iter: vec![rho],
        mstep_objective_per_iter: Vec::with_capacity(opts.em_iters),
        mstep_start_objective_per_iter: Vec::with_capacity(opts.em_iters),
        q_sampler_config: opts.sampler,
        seeds: Vec::with_capacity(opts.em_iters),
    };
    for j in 0..opts.em_iters {
        let s = marginal_cov(&rho, gb)?;
        let seed = rng::derive_tagged(opts.sampler.seed, "qbar", j as u64);
        let moment = match opts.moments {
            MomentMode::Sampled => truncgauss::conditional_second_moment(
                &s,
                bands,
                &SamplerConfig { seed, ..opts.sampler },
            )?,
            MomentMode::Exact => exact_moment(&s, bands, seed)?,
        };
        let problem = MstepProblem::new(&moment.q, gb)?;
        let start_value = problem.eval(&rho)?;
        let (next, value) = problem.minimize(&rho, &nm, [true; 3])?;
        next.validate()?;
        rho = next;
        trace.seeds.push(seed);
        trace.rho_per_iter.push(rho);
        trace.mstep_start_objective_per_iter.push(start_value);
        trace.mstep_objective_per_iter.push(value);
    }
    Ok((rho, trace))
}

/// EM over hyperparameters for a dataset with sampled second moments.
pub fn eb_estimate(
    ds: &Dataset,
    rho_init: &Hyperparameters,
    em_iters: usize,
    sampler_cfg: &SamplerConfig,
) -> Result<(Hyperparameters, EbTrace)> {
    ds.validate()?;
    let gb = GramBuilder::from_dataset(ds)?;
    let bands = BandConstraint::from_bands(&ds.bands);
    eb_estimate_with(
        &gb,
        &bands,
        rho_init,
        &EbOptions {
            em_iters,
            sampler: *sampler_cfg,
            ..EbOptions::default()
        },
    )
}

/// `ln det S_ρ + zᵀ S_ρ⁻¹ z`, twice the negative log marginal likelihood of
/// point data up to a constant.
pub fn point_data_objective(rho: &Hyperparameters, z: &[f64], gb: &GramBuilder) -> Result<f64> {
    MstepProblem::from_point_data(z, gb)?.eval(rho)
}

/// Maximizes the Gaussian marginal likelihood of point data `z`. Nelder–Mead
/// is restarted from its own answer until a restart stops improving.
pub fn point_data_eb(
    z: &[f64],
    rho_init: &Hyperparameters,
    gb: &GramBuilder,
    budget: usize,
) -> Result<Hyperparameters> {
    let problem = MstepProblem::from_point_data(z, gb)?;
    let nm = mstep_optimizer(budget);
    let mut rho = *rho_init;
    let mut value = problem.eval(&rho)?;
    for _ in 0..8 {
        let (next, next_value) = problem.minimize(&rho, &nm, [true; 3])?;
        let gain = value - next_value;
        rho = next;
        value = next_value;
        if gain <= 1e-8 * (1.0 + value.abs()) {
            break;
        }
    }
    Ok(rho)
}
