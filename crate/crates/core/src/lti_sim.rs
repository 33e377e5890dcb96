//! Continuous-time LTI plants: exact ZOH discretization, noiseless
//! simulation on a fine grid and the true impulse response for scoring.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::domain::{is_multiple, ZohInput};
use crate::error::{ensure, Result};

/// Single-input single-output state-space model with D = 0.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
    pub d: f64,
}

impl StateSpace {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, c: DVector<f64>) -> Result<Self> {
        let n = a.nrows();
        ensure(a.is_square() && n > 0, || "A must be square and non-empty".into())?;
        ensure(b.len() == n && c.len() == n, || {
            format!("B and C must have {n} entries")
        })?;
        Ok(Self { a, b, c, d: 0.0 })
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    /// All eigenvalues of A strictly in the open left half-plane.
    pub fn is_hurwitz(&self) -> bool {
        self.a
            .clone()
            .complex_eigenvalues()
            .iter()
            .all(|l| l.re < 0.0)
    }

    /// Magnitude of the slowest decay rate, min |Re λ|.
    pub fn slowest_rate(&self) -> f64 {
        self.a
            .clone()
            .complex_eigenvalues()
            .iter()
            .map(|l| l.re.abs())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn dc_gain(&self) -> Option<f64> {
        let x = self.a.clone().lu().solve(&self.b)?;
        Some(-self.c.dot(&x))
    }
}

/// Mass-spring-damper `G(s) = 1 / (m s² + d s + k)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecondOrderPlant {
    pub m: f64,
    pub d: f64,
    pub k: f64,
}

impl SecondOrderPlant {
    pub fn validate(&self) -> Result<()> {
        ensure(self.m.is_finite() && self.m > 0.0, || {
            format!("mass must be positive, got {}", self.m)
        })?;
        ensure(self.k.is_finite() && self.k > 0.0, || {
            format!("stiffness must be positive, got {}", self.k)
        })?;
        // d = 0 is the undamped oscillator; allowed for analysis, not Hurwitz.
        ensure(self.d.is_finite() && self.d >= 0.0, || {
            format!("damping must be non-negative, got {}", self.d)
        })
    }
}

impl Default for SecondOrderPlant {
    fn default() -> Self {
        Self {
            m: 0.05,
            d: 0.2,
            k: 1.0,
        }
    }
}

/// Controllable canonical realization of `1 / (m s² + d s + k)`.
pub fn plant_to_ss(p: &SecondOrderPlant) -> Result<StateSpace> {
    p.validate()?;
    let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -p.k / p.m, -p.d / p.m]);
    let b = DVector::from_vec(vec![0.0, 1.0]);
    let c = DVector::from_vec(vec![1.0 / p.m, 0.0]);
    StateSpace::new(a, b, c)
}

const PADE13: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371_920_351_148_152;

/// Matrix exponential by scaling and squaring with a degree-13 Padé approximant.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let norm1 = (0..n)
        .map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    if norm1 == 0.0 {
        return eye;
    }
    let s = if norm1 > THETA13 {
        (norm1 / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let a = a * 2f64.powi(-s);
    let b = &PADE13;
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &eye * b[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &eye * b[0];
    let num = &v + &u;
    let den = &v - &u;
    let mut r = den
        .lu()
        .solve(&num)
        .expect("Padé denominator is nonsingular after scaling");
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

/// Exact ZOH discretization `(Ad, Bd) = (e^{A·step}, ∫₀^step e^{Aτ}dτ·B)`,
/// read off the exponential of the augmented matrix `[[A, B], [0, 0]]·step`.
pub fn zoh_discretize(ss: &StateSpace, step: f64) -> Result<(DMatrix<f64>, DVector<f64>)> {
    ensure(step.is_finite() && step >= 0.0, || {
        format!("discretization step must be >= 0, got {step}")
    })?;
    let n = ss.order();
    let mut m = DMatrix::<f64>::zeros(n + 1, n + 1);
    m.view_mut((0, 0), (n, n)).copy_from(&(&ss.a * step));
    m.view_mut((0, n), (n, 1)).copy_from(&(&ss.b * step));
    let e = expm(&m);
    let ad = e.view((0, 0), (n, n)).into_owned();
    let bd = e.view((0, n), (n, 1)).column(0).into_owned();
    Ok((ad, bd))
}

/// Output samples `x(k·grid_step)`, k = 0..=n_steps, from zero initial state.
pub fn simulate_noiseless(
    ss: &StateSpace,
    u: &ZohInput,
    grid_step: f64,
    n_steps: usize,
) -> Result<Vec<f64>> {
    ensure(grid_step > 0.0, || "grid_step must be positive".into())?;
    ensure(is_multiple(u.delta_u, grid_step), || {
        format!(
            "grid_step = {grid_step} does not divide delta_u = {}",
            u.delta_u
        )
    })?;
    let per_hold = (u.delta_u / grid_step).round() as usize;
    let (ad, bd) = zoh_discretize(ss, grid_step)?;
    let mut x = DVector::<f64>::zeros(ss.order());
    let mut out = Vec::with_capacity(n_steps + 1);
    out.push(ss.c.dot(&x));
    for k in 0..n_steps {
        let uk = u.amplitudes.get(k / per_hold).copied().unwrap_or(0.0);
        x = &ad * x + &bd * uk;
        out.push(ss.c.dot(&x));
    }
    Ok(out)
}

/// `g(t) = C e^{At} B` for t ≥ 0, zero for t < 0.
pub fn true_impulse(ss: &StateSpace, t: f64) -> f64 {
    if t < 0.0 {
        return 0.0;
    }
    let e = expm(&(&ss.a * t));
    ss.c.dot(&(e * &ss.b))
}
