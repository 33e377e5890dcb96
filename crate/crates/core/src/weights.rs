//! Representer weights from band data.
//!
//! The MAP objective over weights `c` is
//! `-Σ_i ln P(η_i ≤ z_i < η_i + h | z_i ~ N(K_iᵀc, σ²)) + γ cᵀKc`.
//! Treating the unquantized outputs as latent variables gives an EM
//! iteration whose E-step is a vector of truncated-normal means and whose
//! M-step is a ridge solve with `γ̃ = 2σ²γ`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::truncgauss::{gaussian_band_logprob, trunc_norm_mean, BandConstraint};

/// Slack allowed on each step of the objective trace.
pub const MONOTONE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSolution {
    pub c: Vec<f64>,
    pub iterations_run: usize,
    /// Objective at the starting point followed by one value per iteration.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
}

fn check_dims(k: &DMatrix<f64>, n: usize, what: &'static str) -> Result<()> {
    if k.nrows() != k.ncols() {
        return Err(Error::Validation(format!(
            "kernel matrix is {}x{}, expected square",
            k.nrows(),
            k.ncols()
        )));
    }
    if k.nrows() != n {
        return Err(Error::LengthMismatch {
            what,
            got: n,
            expected: k.nrows(),
        });
    }
    Ok(())
}

fn factor(k: &DMatrix<f64>, gamma_tilde: f64) -> Result<Cholesky<f64, Dyn>> {
    if !(gamma_tilde > 0.0) {
        return Err(Error::Validation(format!(
            "regularization must be positive, got {gamma_tilde}"
        )));
    }
    let n = k.nrows();
    let shifted = k + DMatrix::<f64>::identity(n, n) * gamma_tilde;
    shifted
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite {
            context: "K + γ̃I",
            min_eigenvalue: shifted.symmetric_eigenvalues().min(),
        })
}

/// The MAP objective at `c`, up to an additive constant independent of `c`.
pub fn neg_log_posterior(
    c: &[f64],
    k: &DMatrix<f64>,
    bands: &BandConstraint,
    sigma2: f64,
    gamma: f64,
) -> Result<f64> {
    check_dims(k, c.len(), "weights")?;
    check_dims(k, bands.len(), "bands")?;
    let c = DVector::from_column_slice(c);
    let kc = k * &c;
    let sigma = sigma2.sqrt();
    let data: f64 = (0..kc.len())
        .map(|i| gaussian_band_logprob(kc[i], sigma, bands.lower[i], bands.upper[i]))
        .sum();
    Ok(-data + gamma * c.dot(&kc))
}

/// `z̃_i = E[z_i | band_i]` with `z_i ~ N(K_iᵀc, σ²)`.
pub fn conditional_outputs(
    c: &[f64],
    k: &DMatrix<f64>,
    bands: &BandConstraint,
    sigma2: f64,
) -> Result<Vec<f64>> {
    check_dims(k, c.len(), "weights")?;
    check_dims(k, bands.len(), "bands")?;
    let kc = k * DVector::from_column_slice(c);
    let sigma = sigma2.sqrt();
    Ok((0..kc.len())
        .map(|i| trunc_norm_mean(kc[i], sigma, bands.lower[i], bands.upper[i]))
        .collect())
}

/// One EM step with `(K + γ̃I)` factorized once and reused.
pub struct EmSolver<'a> {
    k: &'a DMatrix<f64>,
    bands: &'a BandConstraint,
    sigma2: f64,
    gamma: f64,
    chol: Cholesky<f64, Dyn>,
}

impl<'a> EmSolver<'a> {
    pub fn new(k: &'a DMatrix<f64>, bands: &'a BandConstraint, sigma2: f64, gamma: f64) -> Result<Self> {
        check_dims(k, bands.len(), "bands")?;
        if !(sigma2 > 0.0 && gamma > 0.0) {
            return Err(Error::Validation(format!(
                "sigma2 and gamma must be positive, got {sigma2} and {gamma}"
            )));
        }
        let chol = factor(k, 2.0 * sigma2 * gamma)?;
        Ok(Self {
            k,
            bands,
            sigma2,
            gamma,
            chol,
        })
    }

    pub fn solve(&self, z: &[f64]) -> Vec<f64> {
        self.chol
            .solve(&DVector::from_column_slice(z))
            .as_slice()
            .to_vec()
    }

    pub fn step(&self, c: &[f64]) -> Result<Vec<f64>> {
        let z = conditional_outputs(c, self.k, self.bands, self.sigma2)?;
        for (i, zi) in z.iter().enumerate() {
            if !(self.bands.lower[i] < *zi && *zi < self.bands.upper[i]) {
                return Err(Error::Numeric(format!(
                    "conditional output {zi} left band {i} [{}, {})",
                    self.bands.lower[i], self.bands.upper[i]
                )));
            }
        }
        Ok(self.solve(&z))
    }

    pub fn objective(&self, c: &[f64]) -> Result<f64> {
        neg_log_posterior(c, self.k, self.bands, self.sigma2, self.gamma)
    }
}

/// A single EM update `c ↦ (K + γ̃I)⁻¹ z̃(c)`.
pub fn em_update(
    c: &[f64],
    k: &DMatrix<f64>,
    bands: &BandConstraint,
    sigma2: f64,
    gamma: f64,
) -> Result<Vec<f64>> {
    check_dims(k, c.len(), "weights")?;
    EmSolver::new(k, bands, sigma2, gamma)?.step(c)
}

/// `c = (K + γ̃I)⁻¹ z`.
pub fn regularized_ls(k: &DMatrix<f64>, z: &[f64], gamma_tilde: f64) -> Result<Vec<f64>> {
    check_dims(k, z.len(), "data")?;
    let chol = factor(k, gamma_tilde)?;
    Ok(chol.solve(&DVector::from_column_slice(z)).as_slice().to_vec())
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Iterates EM from `c_init` (band midpoints through a ridge solve when
/// `None`) until the relative sup-norm step falls below `tol` or `max_iter`
/// iterations have run. A rise of the objective beyond [`MONOTONE_SLACK`]
/// is reported as an error.
pub fn map_em_weights(
    k: &DMatrix<f64>,
    bands: &BandConstraint,
    sigma2: f64,
    gamma: f64,
    c_init: Option<&[f64]>,
    max_iter: usize,
    tol: f64,
) -> Result<WeightSolution> {
    if max_iter == 0 {
        return Err(Error::Validation("max_iter must be at least 1".into()));
    }
    let solver = EmSolver::new(k, bands, sigma2, gamma)?;
    let mut c = match c_init {
        Some(c) => {
            check_dims(k, c.len(), "initial weights")?;
            c.to_vec()
        }
        None => solver.solve(&bands.midpoints()),
    };
    let mut obj = solver.objective(&c)?;
    let mut trace = vec![obj];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let next = solver.step(&c)?;
        let next_obj = solver.objective(&next)?;
        if next_obj > obj + MONOTONE_SLACK {
            return Err(Error::NonMonotone {
                iteration: iterations,
                before: obj,
                after: next_obj,
            });
        }
        let step = next
            .iter()
            .zip(&c)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let scale = 1.0 + sup_norm(&c);
        c = next;
        obj = next_obj;
        trace.push(obj);
        if step < tol * scale {
            converged = true;
            break;
        }
    }
    Ok(WeightSolution {
        c,
        iterations_run: iterations,
        objective_trace: trace,
        converged,
    })
}
