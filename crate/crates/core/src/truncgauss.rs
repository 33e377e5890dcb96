//! Truncated Gaussian primitives.
//!
//! All band probabilities are handled in log space. Whenever a band lies on
//! one side of the mean, mass and moment ratios are written with `erfcx` so
//! that the common factor `e^{-α²/2}` cancels analytically instead of
//! underflowing; bands narrow relative to the local curvature of the density
//! use a midpoint expansion.
//!
//! Multivariate sampling is a systematic-scan Gibbs sampler over
//! coordinates, each conditional being an exact univariate truncated normal.

use std::f64::consts::{FRAC_1_SQRT_2, LN_2};

use nalgebra::{DMatrix, DVector};
use rand::distr::Open01;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::special::{erf, erfc, erfcx};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

/// Relative width below which a band is treated with the midpoint expansion.
const NARROW: f64 = 1e-3;

/// Box `lower[i] < z_i < upper[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandConstraint {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BandConstraint {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let b = Self { lower, upper };
        b.validate()?;
        Ok(b)
    }

    pub fn from_bands(bands: &crate::domain::BandSequence) -> Self {
        Self {
            lower: bands.eta.clone(),
            upper: bands.eta.iter().map(|e| e + bands.h).collect(),
        }
    }

    /// Boxes of half-width `half` centred on `z`.
    pub fn around(z: &[f64], half: f64) -> Self {
        Self {
            lower: z.iter().map(|v| v - half).collect(),
            upper: z.iter().map(|v| v + half).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.len() != self.upper.len() {
            return Err(Error::LengthMismatch {
                what: "upper bounds",
                got: self.upper.len(),
                expected: self.lower.len(),
            });
        }
        for (i, (l, u)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !(l < u) || l.is_nan() {
                return Err(Error::Validation(format!(
                    "band {i} is empty: [{l}, {u})"
                )));
            }
        }
        Ok(())
    }

    pub fn midpoints(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| 0.5 * (l + u))
            .collect()
    }
}

/// Monte Carlo estimate of `E[z zᵀ | z ∈ box]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentEstimate {
    pub q: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub n_samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n_samples: usize,
    pub burn_in: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_samples: 1000,
            burn_in: 200,
            seed: 0,
        }
    }
}

fn is_narrow(alpha: f64, beta: f64) -> bool {
    let m = 0.5 * (alpha + beta);
    (beta - alpha) * (1.0 + m.abs()) < NARROW
}

fn x_phi(x: f64) -> f64 {
    if x.is_infinite() {
        0.0
    } else {
        x * (-0.5 * x * x - LN_SQRT_2PI).exp()
    }
}

fn phi(x: f64) -> f64 {
    if x.is_infinite() {
        0.0
    } else {
        (-0.5 * x * x - LN_SQRT_2PI).exp()
    }
}

/// For 0 ≤ α < β: `(ρ, D)` with `ρ = e^{-(β²-α²)/2}` and
/// `D = erfcx(α/√2) - ρ·erfcx(β/√2)`, so that `Φ(β) - Φ(α) = ½ e^{-α²/2} D`.
fn upper_tail_parts(alpha: f64, beta: f64) -> (f64, f64, f64) {
    let expo = -0.5 * (beta - alpha) * (beta + alpha);
    let rho = expo.exp();
    let one_minus_rho = -expo.exp_m1();
    let tail_b = if beta.is_infinite() {
        0.0
    } else {
        rho * erfcx(beta * FRAC_1_SQRT_2)
    };
    (rho, one_minus_rho, erfcx(alpha * FRAC_1_SQRT_2) - tail_b)
}

/// Log mass of a band of standardized width `w` centred at `m`, to O(w⁴).
fn narrow_log_mass(w: f64, m: f64) -> f64 {
    w.ln() - 0.5 * m * m - LN_SQRT_2PI + (w * w * (m * m - 1.0) / 24.0).ln_1p()
}

/// `ln(Φ(β) - Φ(α))` for standardized bounds α < β.
pub fn log_std_mass(alpha: f64, beta: f64) -> f64 {
    if is_narrow(alpha, beta) {
        return narrow_log_mass(beta - alpha, 0.5 * (alpha + beta));
    }
    if alpha >= 0.0 {
        let (_, _, d) = upper_tail_parts(alpha, beta);
        -LN_2 - 0.5 * alpha * alpha + d.ln()
    } else if beta <= 0.0 {
        log_std_mass(-beta, -alpha)
    } else {
        (0.5 * (erf(beta * FRAC_1_SQRT_2) - erf(alpha * FRAC_1_SQRT_2))).ln()
    }
}

/// `E[X | α < X < β]` for X ~ N(0, 1).
pub fn std_trunc_mean(alpha: f64, beta: f64) -> f64 {
    let e = if is_narrow(alpha, beta) {
        let w = beta - alpha;
        let m = 0.5 * (alpha + beta);
        m - m * w * w / 12.0
    } else if alpha >= 0.0 {
        let (_, one_minus_rho, d) = upper_tail_parts(alpha, beta);
        SQRT_2_OVER_PI * one_minus_rho / d
    } else if beta <= 0.0 {
        -std_trunc_mean(-beta, -alpha)
    } else {
        let p = 0.5 * (erf(beta * FRAC_1_SQRT_2) - erf(alpha * FRAC_1_SQRT_2));
        (phi(alpha) - phi(beta)) / p
    };
    e.clamp(alpha, beta)
}

/// `E[X² | α < X < β]` for X ~ N(0, 1).
pub fn std_trunc_second(alpha: f64, beta: f64) -> f64 {
    if is_narrow(alpha, beta) {
        let w = beta - alpha;
        let mean = std_trunc_mean(alpha, beta);
        return mean * mean + w * w / 12.0;
    }
    let s = if alpha >= 0.0 {
        let (rho, _, d) = upper_tail_parts(alpha, beta);
        let b_rho = if beta.is_infinite() { 0.0 } else { beta * rho };
        1.0 + SQRT_2_OVER_PI * (alpha - b_rho) / d
    } else if beta <= 0.0 {
        return std_trunc_second(-beta, -alpha);
    } else {
        let p = 0.5 * (erf(beta * FRAC_1_SQRT_2) - erf(alpha * FRAC_1_SQRT_2));
        1.0 + (x_phi(alpha) - x_phi(beta)) / p
    };
    let mean = std_trunc_mean(alpha, beta);
    // the truncated variance is positive; guard against roundoff in far tails
    s.max(mean * mean)
}

/// `ln ∫_a^b N(z; μ, σ²) dz`.
pub fn gaussian_band_logprob(mu: f64, sigma: f64, a: f64, b: f64) -> f64 {
    let (alpha, beta) = ((a - mu) / sigma, (b - mu) / sigma);
    if is_narrow(alpha, beta) {
        // β - α loses the width's leading digits when the band is far from μ
        return narrow_log_mass((b - a) / sigma, (0.5 * (a + b) - mu) / sigma);
    }
    log_std_mass(alpha, beta)
}

/// `E[Z | a < Z < b]`, Z ~ N(μ, σ²).
pub fn trunc_norm_mean(mu: f64, sigma: f64, a: f64, b: f64) -> f64 {
    let e = std_trunc_mean((a - mu) / sigma, (b - mu) / sigma);
    inside(mu + sigma * e, a, b)
}

/// `E[Z² | a < Z < b]`, Z ~ N(μ, σ²).
pub fn trunc_norm_second_moment(mu: f64, sigma: f64, a: f64, b: f64) -> f64 {
    let (alpha, beta) = ((a - mu) / sigma, (b - mu) / sigma);
    let e1 = std_trunc_mean(alpha, beta);
    let e2 = std_trunc_second(alpha, beta);
    mu * mu + 2.0 * mu * sigma * e1 + sigma * sigma * e2
}

/// `ln Q(x)` with `Q(x) = P(X > x)`.
fn log_upper_tail(x: f64) -> f64 {
    if x >= 0.0 {
        -0.5 * x * x + (0.5 * erfcx(x * FRAC_1_SQRT_2)).ln()
    } else {
        (0.5 * erfc(x * FRAC_1_SQRT_2)).ln()
    }
}

/// `d/dx ln Q(x) = -φ(x)/Q(x)`.
fn d_log_upper_tail(x: f64) -> f64 {
    if x >= 0.0 {
        -SQRT_2_OVER_PI / erfcx(x * FRAC_1_SQRT_2)
    } else {
        -phi(x) / (0.5 * erfc(x * FRAC_1_SQRT_2))
    }
}

/// Solves `ln Q(x) = log_p` for `log_p ≤ ln ½` (so x ≥ 0) by Newton's method
/// on the concave function `ln Q`.
fn inv_upper_tail(log_p: f64) -> f64 {
    // Abramowitz & Stegun 26.2.23 starting point
    let t = (-2.0 * log_p).sqrt();
    let mut x = t
        - (2.515_517 + 0.802_853 * t + 0.010_328 * t * t)
            / (1.0 + 1.432_788 * t + 0.189_269 * t * t + 0.001_308 * t * t * t);
    x = x.max(0.0);
    for _ in 0..60 {
        let g = log_upper_tail(x) - log_p;
        let step = g / d_log_upper_tail(x);
        x -= step;
        if step.abs() <= 1e-15 * (1.0 + x.abs()) {
            break;
        }
    }
    x
}

fn open01<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(Open01)
}

/// One draw of X ~ N(0, 1) conditioned on α < X < β.
pub fn sample_std_trunc<R: Rng + ?Sized>(rng: &mut R, alpha: f64, beta: f64) -> f64 {
    if beta <= 0.0 {
        return -sample_std_trunc(rng, -beta, -alpha);
    }
    // β > 0 from here; the mode of the truncated density is max(α, 0)
    let x_mode = alpha.max(0.0);
    let spread = 0.5 * (alpha * alpha).max(beta * beta) - 0.5 * x_mode * x_mode;
    if spread <= 1.0 {
        // nearly flat: uniform proposal
        let w = beta - alpha;
        loop {
            let x = alpha + w * open01(rng);
            if open01(rng) <= (0.5 * (x_mode * x_mode - x * x)).exp() {
                return x;
            }
        }
    }
    if alpha > 5.0 {
        // Robert (1995) translated-exponential proposal
        let lambda = 0.5 * (alpha + (alpha * alpha + 4.0).sqrt());
        loop {
            let x = alpha - open01(rng).ln() / lambda;
            if x >= beta {
                continue;
            }
            let d = x - lambda;
            if open01(rng) <= (-0.5 * d * d).exp() {
                return x;
            }
        }
    }
    let log_mass = log_std_mass(alpha, beta);
    if log_mass > (0.3f64).ln() {
        loop {
            let x: f64 = rng.sample(StandardNormal);
            if alpha < x && x < beta {
                return x;
            }
        }
    }
    let u = open01(rng);
    if alpha >= 0.0 {
        // upper tail: Q(x) uniform on (Q(β), Q(α))
        let la = log_upper_tail(alpha);
        let ratio = (log_upper_tail(beta) - la).exp();
        let log_p = la + (ratio + u * (1.0 - ratio)).ln();
        inv_upper_tail(log_p)
    } else {
        let mass = log_mass.exp();
        let lower = 0.5 * erfc(-alpha * FRAC_1_SQRT_2) + u * mass;
        let upper = 0.5 * erfc(beta * FRAC_1_SQRT_2) + (1.0 - u) * mass;
        if lower < upper {
            -inv_upper_tail(lower.ln())
        } else {
            inv_upper_tail(upper.ln())
        }
    }
}

/// Strictly-inside guard against rounding onto a bound.
fn inside(x: f64, lo: f64, hi: f64) -> f64 {
    if x <= lo {
        lo.next_up().min(0.5 * (lo + hi))
    } else if x >= hi {
        hi.next_down().max(0.5 * (lo + hi))
    } else {
        x
    }
}

/// One draw of Z ~ N(μ, σ²) conditioned on a < Z < b.
pub fn sample_trunc_norm<R: Rng + ?Sized>(rng: &mut R, mu: f64, sigma: f64, a: f64, b: f64) -> f64 {
    let x = mu + sigma * sample_std_trunc(rng, (a - mu) / sigma, (b - mu) / sigma);
    inside(x, a, b)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    acc[0] + acc[1] + acc[2] + acc[3] + tail
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigenvalues().min()
}

/// Draws from N(μ, Σ) restricted to `bx`, returned as an `n_samples × N`
/// matrix (one draw per row). Systematic-scan Gibbs with `burn_in` discarded
/// sweeps and no thinning; deterministic in `seed`.
pub fn sample_tmvn(
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    bx: &BandConstraint,
    n_samples: usize,
    burn_in: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    bx.validate()?;
    let n = bx.len();
    if mu.len() != n || sigma.nrows() != n || sigma.ncols() != n {
        return Err(Error::LengthMismatch {
            what: "mean/covariance",
            got: mu.len(),
            expected: n,
        });
    }
    let chol = sigma.clone().cholesky().ok_or_else(|| Error::NotPositiveDefinite {
        context: "covariance not PD",
        min_eigenvalue: min_eigenvalue(sigma),
    })?;
    let prec = chol.inverse();
    let cond_sd: Vec<f64> = (0..n).map(|i| prec[(i, i)].recip().sqrt()).collect();

    let mut x: Vec<f64> = (0..n)
        .map(|i| {
            let (lo, hi) = (bx.lower[i], bx.upper[i]);
            if lo < mu[i] && mu[i] < hi {
                mu[i]
            } else if lo.is_finite() && hi.is_finite() {
                0.5 * (lo + hi)
            } else if lo.is_finite() {
                lo + cond_sd[i]
            } else {
                hi - cond_sd[i]
            }
        })
        .collect();
    let mut dev: Vec<f64> = (0..n).map(|i| x[i] - mu[i]).collect();

    let mut rng = rng::stream(seed);
    let mut out = DMatrix::<f64>::zeros(n_samples, n);
    for sweep in 0..burn_in + n_samples {
        for i in 0..n {
            // column i of the symmetric precision, contiguous in storage
            let row = &prec.as_slice()[i * n..(i + 1) * n];
            let dot = dot(row, &dev) - prec[(i, i)] * dev[i];
            let m = mu[i] - dot / prec[(i, i)];
            let (lo, hi) = (bx.lower[i], bx.upper[i]);
            let sd = cond_sd[i];
            let lm = log_std_mass((lo - m) / sd, (hi - m) / sd);
            if !lm.is_finite() {
                return Err(Error::BandUnreachable { index: i });
            }
            let xi = sample_trunc_norm(&mut rng, m, sd, lo, hi);
            if !(lo < xi && xi < hi) {
                return Err(Error::Numeric(format!(
                    "draw {xi} escaped band ({lo}, {hi}) at coordinate {i}"
                )));
            }
            x[i] = xi;
            dev[i] = xi - mu[i];
        }
        if sweep >= burn_in {
            out.row_mut(sweep - burn_in).copy_from_slice(&x);
        }
    }
    Ok(out)
}

/// `Q̄ = (1/n) Σ_s z⁽ˢ⁾ z⁽ˢ⁾ᵀ` over draws of N(0, S) restricted to `bx`.
pub fn conditional_second_moment(
    s_rho: &DMatrix<f64>,
    bx: &BandConstraint,
    cfg: &SamplerConfig,
) -> Result<MomentEstimate> {
    let n = bx.len();
    let draws = sample_tmvn(
        &DVector::zeros(n),
        s_rho,
        bx,
        cfg.n_samples,
        cfg.burn_in,
        cfg.seed,
    )?;
    Ok(moments_from_draws(&draws, cfg.seed))
}

pub(crate) fn moments_from_draws(draws: &DMatrix<f64>, seed: u64) -> MomentEstimate {
    let count = draws.nrows().max(1) as f64;
    let mut q = draws.tr_mul(draws) / count;
    crate::kernel::symmetrize(&mut q);
    let mean = draws.row_mean().transpose();
    MomentEstimate {
        q,
        mean,
        n_samples: draws.nrows(),
        seed,
    }
}

/// Exact `E[z² | a < z < b]` for a single coordinate z ~ N(0, s).
pub fn univariate_second_moment(s: f64, a: f64, b: f64) -> f64 {
    trunc_norm_second_moment(0.0, s.sqrt(), a, b)
}
