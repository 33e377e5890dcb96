//! First-order stable-spline kernel `k(t, τ) = e^{-β max(t, τ)}` and the
//! quantities built from it for a ZOH input:
//!
//! - the output Gram matrix `K_ij = ∫∫ u(iΔ-ξ) u(jΔ-τ) k(ξ, τ) dτ dξ`,
//! - the representers `ĝ_i(t) = ∫ u(iΔ-τ) k(t, τ) dτ`,
//! - the impulse response estimate `ĝ(t) = Σ c_i ĝ_i(t)`.
//!
//! Everything is integrated in closed form. The input is causal, so the
//! integrals only run over `[0, iΔ]`.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use nalgebra::{DMatrix, DVector};

use crate::domain::ZohInput;
use crate::error::{ensure, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KernelGram {
    pub k: DMatrix<f64>,
    pub beta: f64,
    /// Hash of the input and Δ the matrix was built from.
    pub input_id: u64,
}

impl KernelGram {
    pub fn n(&self) -> usize {
        self.k.nrows()
    }
}

pub fn ss1_kernel(t: f64, tau: f64, beta: f64) -> f64 {
    (-beta * t.max(tau)).exp()
}

pub fn input_id(u: &ZohInput, delta: f64) -> u64 {
    let mut h = DefaultHasher::new();
    u.delta_u.to_bits().hash(&mut h);
    delta.to_bits().hash(&mut h);
    for a in &u.amplitudes {
        a.to_bits().hash(&mut h);
    }
    h.finish()
}

/// `1 - e^{-x}(1 + x)` without cancellation for small x.
fn one_minus_exp_poly(x: f64) -> f64 {
    if x < 0.5 {
        // Σ_{n≥2} (-1)^n (n-1) x^n / n!
        let mut term = x * x / 2.0; // x^n / n! at n = 2
        let mut sum = term;
        let mut n = 2.0;
        while term.abs() > 1e-18 * sum.abs() {
            term *= -x / (n + 1.0);
            n += 1.0;
            sum += (n - 1.0) * term;
        }
        sum
    } else {
        -(-x).exp_m1() - x * (-x).exp()
    }
}

/// ∫_{a0}^{a1} ∫_{b0}^{b1} e^{-β max(ξ, τ)} dτ dξ for intervals with a1 ≤ b0.
fn separated(a0: f64, a1: f64, b0: f64, b1: f64, beta: f64) -> f64 {
    (a1 - a0) * (-beta * b0).exp() * (-(-beta * (b1 - b0)).exp_m1()) / beta
}

/// ∫∫ over the square [o0, o1]², which the diagonal splits into two triangles.
fn diagonal_square(o0: f64, o1: f64, beta: f64) -> f64 {
    2.0 * (-beta * o0).exp() * one_minus_exp_poly(beta * (o1 - o0)) / (beta * beta)
}

/// `∫_{x0}^{x1} ∫_{y0}^{y1} e^{-β max(ξ, τ)} dτ dξ`, exact.
///
/// The rectangle is cut along the overlap `[o0, o1]` of its two sides: the
/// overlap square straddles the diagonal, every other piece lies strictly on
/// one side of it where `max` is just the larger coordinate.
pub fn rect_integral(x0: f64, x1: f64, y0: f64, y1: f64, beta: f64) -> f64 {
    if x1 <= x0 || y1 <= y0 {
        return 0.0;
    }
    if x1 <= y0 {
        return separated(x0, x1, y0, y1, beta);
    }
    if y1 <= x0 {
        return separated(y0, y1, x0, x1, beta);
    }
    let o0 = x0.max(y0);
    let o1 = x1.min(y1);
    let mut total = diagonal_square(o0, o1, beta);
    if x0 < o0 {
        total += separated(x0, o0, o0, y1, beta);
    }
    if y0 < o0 {
        total += separated(y0, o0, o0, x1, beta);
    }
    if x1 > o1 {
        total += separated(o0, o1, o1, x1, beta);
    }
    if y1 > o1 {
        total += separated(o0, o1, o1, y1, beta);
    }
    total
}

/// Constant pieces of `τ ↦ u(iΔ - τ)` on `[0, iΔ]` as `(τ0, τ1, amplitude)`.
/// Zero-amplitude pieces are omitted.
pub fn input_segments(u: &ZohInput, delta: f64, i: usize) -> Result<Vec<(f64, f64, f64)>> {
    let r = u.hold_ratio(delta)?;
    let mut out = Vec::new();
    // cell l (1-based) is τ ∈ [(l-1)Δ, lΔ) and sees input cell n = i - l
    let mut p = 0usize;
    while p * r < i {
        let n_lo = p * r;
        let n_hi = ((p + 1) * r - 1).min(i - 1);
        let a = u.amplitudes.get(p).copied().unwrap_or(0.0);
        if a != 0.0 {
            let l_lo = i - n_hi;
            let l_hi = i - n_lo;
            out.push(((l_lo - 1) as f64 * delta, l_hi as f64 * delta, a));
        }
        p += 1;
    }
    Ok(out)
}

/// Single Gram entry by summing rectangle integrals over pairs of ZOH
/// segments. Independent of the factorized assembly in [`gram_matrix`].
pub fn gram_entry(u: &ZohInput, delta: f64, beta: f64, i: usize, j: usize) -> Result<f64> {
    let si = input_segments(u, delta, i)?;
    let sj = input_segments(u, delta, j)?;
    let mut total = 0.0;
    for &(x0, x1, a) in &si {
        for &(y0, y1, b) in &sj {
            total += a * b * rect_integral(x0, x1, y0, y1, beta);
        }
    }
    Ok(total)
}

/// N×N Gram matrix for samples i, j = 1..N.
///
/// With Δ-cells `l = 1..N` the input is constant on each cell, so
/// `K = U C Uᵀ` with `U_il = u_{i-l}` (lower-triangular Toeplitz) and
/// `C_ll'` the kernel integral over cell pair (l, l'). `C` depends on its
/// indices only through `max(l, l')`, which lets `C Uᵀ` be formed with prefix
/// sums in O(N²); the remaining product is one dense matrix multiply.
pub fn gram_matrix(u: &ZohInput, delta: f64, beta: f64, n: usize) -> Result<KernelGram> {
    ensure(n >= 1, || "N must be at least 1".into())?;
    ensure(beta.is_finite() && beta > 0.0, || {
        format!("beta must be positive, got {beta}")
    })?;
    let r = u.hold_ratio(delta)?;
    let cells: Vec<f64> = (0..n as i64).map(|c| u.cell_value(c, r)).collect();
    let umat = DMatrix::from_fn(n, n, |i, l| if l <= i { cells[i - l] } else { 0.0 });

    let q = (-beta * delta).exp();
    let off = delta * (-(-beta * delta).exp_m1()) / beta;
    let diag = 2.0 * one_minus_exp_poly(beta * delta) / (beta * beta);
    let decay: Vec<f64> = (0..n).map(|l| q.powi(l as i32)).collect();

    // W = C Uᵀ, column j is C applied to row j of U
    let mut w = DMatrix::<f64>::zeros(n, n);
    let mut tail = vec![0.0; n + 1];
    for j in 0..n {
        let v = umat.row(j);
        tail[n] = 0.0;
        for l in (0..n).rev() {
            tail[l] = tail[l + 1] + decay[l] * v[l];
        }
        let mut head = 0.0;
        for l in 0..n {
            w[(l, j)] = decay[l] * (off * head + diag * v[l]) + off * tail[l + 1];
            head += v[l];
        }
    }
    let mut k = &umat * w;
    symmetrize(&mut k);
    Ok(KernelGram {
        k,
        beta,
        input_id: input_id(u, delta),
    })
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let s = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = s;
            m[(j, i)] = s;
        }
    }
}

/// `ĝ_i(t) = e^{-βt}·∫_{τ<t} u(iΔ-τ)dτ + ∫_{τ>t} u(iΔ-τ) e^{-βτ} dτ`.
pub fn representer_eval(u: &ZohInput, delta: f64, i: usize, beta: f64, t: f64) -> Result<f64> {
    let segs = input_segments(u, delta, i)?;
    Ok(representer_from_segments(&segs, beta, t))
}

fn representer_from_segments(segs: &[(f64, f64, f64)], beta: f64, t: f64) -> f64 {
    let et = (-beta * t).exp();
    segs.iter()
        .map(|&(t0, t1, a)| {
            let piece = if t >= t1 {
                et * (t1 - t0)
            } else if t <= t0 {
                (-beta * t0).exp() * (-(-beta * (t1 - t0)).exp_m1()) / beta
            } else {
                et * (t - t0) + et * (-(-beta * (t1 - t)).exp_m1()) / beta
            };
            a * piece
        })
        .sum()
}

/// `ĝ(t) = Σ_i c_i ĝ_i(t)` on each point of `t_grid`.
pub fn reconstruct_impulse(
    c: &[f64],
    u: &ZohInput,
    delta: f64,
    beta: f64,
    t_grid: &[f64],
) -> Result<Vec<f64>> {
    let segs: Vec<Vec<(f64, f64, f64)>> = (1..=c.len())
        .map(|i| input_segments(u, delta, i))
        .collect::<Result<_>>()?;
    Ok(t_grid
        .iter()
        .map(|&t| {
            c.iter()
                .zip(&segs)
                .filter(|(ci, _)| **ci != 0.0)
                .map(|(ci, s)| ci * representer_from_segments(s, beta, t))
                .sum()
        })
        .collect())
}

/// `K c`: the model output at t = iΔ.
pub fn predict_output(k: &KernelGram, c: &[f64]) -> Result<Vec<f64>> {
    if c.len() != k.n() {
        return Err(Error::LengthMismatch {
            what: "weight vector",
            got: c.len(),
            expected: k.n(),
        });
    }
    let out = &k.k * DVector::from_column_slice(c);
    Ok(out.iter().copied().collect())
}
