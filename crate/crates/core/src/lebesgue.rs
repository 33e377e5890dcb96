//! Lebesgue sampling: threshold-crossing events, band tracking at the fast
//! detection rate, and the midpoint surrogate used by the Riemann baseline.
//!
//! Band membership is lower-inclusive: a value exactly on `m·h` belongs to
//! `[m·h, (m+1)·h)`.

use serde::{Deserialize, Serialize};

use crate::domain::{BandSequence, SamplingConfig};
use crate::error::{Error, Result};

/// Threshold `m·h` reached at time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossingEvent {
    pub t: f64,
    pub value: f64,
    pub m: i64,
}

/// Integer band index `m` with `z ∈ [m·h, (m+1)·h)`.
pub fn band_index(z: f64, h: f64) -> i64 {
    let mut m = (z / h).floor() as i64;
    // z/h can round across an integer; settle against the products actually
    // used as band edges.
    if z < m as f64 * h {
        m -= 1;
    } else if z >= (m + 1) as f64 * h {
        m += 1;
    }
    m
}

/// Lower band edge `η = h·floor(z/h)`.
pub fn quantize_band(z: f64, h: f64) -> f64 {
    band_index(z, h) as f64 * h
}

/// Threshold crossings of a signal sampled every `step` seconds.
///
/// The first event sits at t = 0 and records the band the signal starts in.
/// Every change of band between consecutive samples emits one event per
/// threshold traversed, in traversal order, with its time placed by linear
/// interpolation. A touch of a threshold that immediately returns (equal
/// time, same threshold, opposite direction) is not an event.
pub fn detect_events(z_fine: &[f64], step: f64, h: f64) -> Vec<CrossingEvent> {
    let Some(&z0) = z_fine.first() else {
        return Vec::new();
    };
    let m0 = band_index(z0, h);
    let starts_on_threshold = z0 == m0 as f64 * h;
    let mut events = vec![CrossingEvent {
        t: 0.0,
        value: m0 as f64 * h,
        m: m0,
    }];

    let push = |events: &mut Vec<CrossingEvent>, ev: CrossingEvent| {
        if events.len() > 1 {
            let last = events[events.len() - 1];
            if last.t == ev.t && last.m == ev.m {
                events.pop();
                return;
            }
        }
        events.push(ev);
    };

    let mut b_prev = m0;
    for k in 1..z_fine.len() {
        let (za, zb) = (z_fine[k - 1], z_fine[k]);
        let b_new = band_index(zb, h);
        if b_new == b_prev {
            continue;
        }
        let at = |m: i64| {
            let level = m as f64 * h;
            let frac = ((level - za) / (zb - za)).clamp(0.0, 1.0);
            CrossingEvent {
                t: ((k - 1) as f64 + frac) * step,
                value: level,
                m,
            }
        };
        if b_new > b_prev {
            for m in b_prev + 1..=b_new {
                push(&mut events, at(m));
            }
        } else {
            for m in (b_new + 1..=b_prev).rev() {
                // Leaving a starting threshold downward is the initial event itself.
                if k == 1 && m == m0 && starts_on_threshold {
                    continue;
                }
                push(&mut events, at(m));
            }
        }
        b_prev = b_new;
    }
    events
}

/// Bands at t = iΔ, i = 1..N, by direct quantization of the fine signal.
/// N is the number of whole Δ periods covered by `z_fine`.
pub fn band_sequence(z_fine: &[f64], cfg: &SamplingConfig) -> BandSequence {
    let s = cfg.sim_substeps;
    let n = z_fine.len().saturating_sub(1) / s;
    BandSequence {
        eta: (1..=n).map(|i| quantize_band(z_fine[i * s], cfg.h)).collect(),
        h: cfg.h,
        delta: cfg.delta,
    }
}

/// Bands at t = iΔ, i = 1..n, reconstructed from the event stream alone.
///
/// The current band is tracked through the events: threshold `b+1` means the
/// signal went up into band `b+1`; threshold `b` means it went down into `b-1`.
pub fn bands_from_events(
    events: &[CrossingEvent],
    cfg: &SamplingConfig,
    n: usize,
) -> Result<BandSequence> {
    let first = events
        .first()
        .ok_or_else(|| Error::Validation("event stream is empty".into()))?;
    let mut band = first.m;
    if let Some(next) = events.get(1) {
        if next.m == first.m - 1 {
            // started on threshold m0 and left downward
            band = first.m - 1;
        }
    }
    let step = cfg.fine_step();
    let mut next = 1;
    let mut eta = Vec::with_capacity(n);
    for i in 1..=n {
        let t_i = (i * cfg.sim_substeps) as f64 * step;
        while let Some(ev) = events.get(next) {
            if ev.m == band + 1 {
                if ev.t > t_i {
                    break;
                }
                band += 1;
            } else if ev.m == band {
                if ev.t >= t_i {
                    break;
                }
                band -= 1;
            } else {
                return Err(Error::Validation(format!(
                    "event {next} crosses threshold {} from band {band}",
                    ev.m
                )));
            }
            next += 1;
        }
        eta.push(band as f64 * cfg.h);
    }
    Ok(BandSequence {
        eta,
        h: cfg.h,
        delta: cfg.delta,
    })
}

/// `η_i + h/2`: the point surrogate for each band.
pub fn midpoint_data(bands: &BandSequence) -> Vec<f64> {
    bands.eta.iter().map(|&e| e + 0.5 * bands.h).collect()
}

/// `N_L / N`.
pub fn event_compression_ratio(events: &[CrossingEvent], n: usize) -> f64 {
    assert!(n >= 1, "N must be at least 1");
    events.len() as f64 / n as f64
}
