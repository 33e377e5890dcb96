//! Core data types and the dataset file format.
//!
//! Output samples are indexed 1..N: the sample at t = 0 is never part of a
//! [`BandSequence`], so `eta[0]` is the band at t = Δ.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Tolerance used when checking that a float is an integer multiple of a step.
const GRID_TOL: f64 = 1e-9;

pub(crate) fn is_multiple(value: f64, step: f64) -> bool {
    let r = value / step;
    (r - r.round()).abs() <= GRID_TOL * r.abs().max(1.0)
}

/// Parameters of the amplitude detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    /// Fast detection period Δ in seconds.
    pub delta: f64,
    /// Threshold spacing.
    pub h: f64,
    /// Fine-grid subdivisions of Δ used for crossing detection.
    pub sim_substeps: usize,
}

impl SamplingConfig {
    pub fn new(delta: f64, h: f64, sim_substeps: usize) -> Result<Self> {
        let cfg = Self {
            delta,
            h,
            sim_substeps,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.delta.is_finite() && self.delta > 0.0, || {
            format!("delta must be positive, got {}", self.delta)
        })?;
        ensure(self.h.is_finite() && self.h > 0.0, || {
            format!("h must be positive, got {}", self.h)
        })?;
        ensure(self.sim_substeps >= 1, || "sim_substeps must be >= 1".into())
    }

    /// Fine simulation step Δ / sim_substeps.
    pub fn fine_step(&self) -> f64 {
        self.delta / self.sim_substeps as f64
    }
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            delta: 0.1,
            h: 1.0,
            sim_substeps: 20,
        }
    }
}

/// Piecewise-constant input produced by a zero-order hold.
///
/// `u(t) = amplitudes[k]` for `t ∈ [k·Δu, (k+1)·Δu)`, and zero before t = 0
/// and after the last hold interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZohInput {
    pub delta_u: f64,
    #[serde(with = "f64_vec")]
    pub amplitudes: Vec<f64>,
    #[serde(default)]
    pub t0: f64,
}

impl ZohInput {
    pub fn new(delta_u: f64, amplitudes: Vec<f64>) -> Result<Self> {
        let u = Self {
            delta_u,
            amplitudes,
            t0: 0.0,
        };
        u.validate()?;
        Ok(u)
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.delta_u.is_finite() && self.delta_u > 0.0, || {
            format!("delta_u must be positive, got {}", self.delta_u)
        })?;
        ensure(!self.amplitudes.is_empty(), || "input amplitudes are empty".into())?;
        ensure(self.amplitudes.iter().all(|a| a.is_finite()), || {
            "input amplitudes must be finite".into()
        })?;
        ensure(self.t0 == 0.0, || format!("input must start at t0 = 0, got {}", self.t0))
    }

    /// Checks that Δu is an integer multiple of `delta` and returns the ratio.
    pub fn hold_ratio(&self, delta: f64) -> Result<usize> {
        ensure(is_multiple(self.delta_u, delta), || {
            format!("delta_u = {} is not a multiple of delta = {}", self.delta_u, delta)
        })?;
        Ok((self.delta_u / delta).round() as usize)
    }

    pub fn value_at(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        let k = (t / self.delta_u).floor() as usize;
        self.amplitudes.get(k).copied().unwrap_or(0.0)
    }

    /// Input value on the Δ-cell `[n·Δ, (n+1)·Δ)`, given `ratio = Δu/Δ`.
    pub(crate) fn cell_value(&self, n: i64, ratio: usize) -> f64 {
        if n < 0 {
            return 0.0;
        }
        self.amplitudes
            .get(n as usize / ratio)
            .copied()
            .unwrap_or(0.0)
    }

    /// Duration covered by the amplitudes.
    pub fn duration(&self) -> f64 {
        self.delta_u * self.amplitudes.len() as f64
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            delta_u: self.delta_u,
            amplitudes: self.amplitudes.iter().map(|v| a * v).collect(),
            t0: self.t0,
        }
    }
}

/// Set-valued output: sample i (1-based) lies in `[eta[i-1], eta[i-1] + h)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSequence {
    #[serde(with = "f64_vec")]
    pub eta: Vec<f64>,
    pub h: f64,
    pub delta: f64,
}

impl BandSequence {
    pub fn len(&self) -> usize {
        self.eta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eta.is_empty()
    }

    pub fn lower(&self, i: usize) -> f64 {
        self.eta[i]
    }

    pub fn upper(&self, i: usize) -> f64 {
        self.eta[i] + self.h
    }

    pub fn contains(&self, i: usize, z: f64) -> bool {
        self.lower(i) <= z && z < self.upper(i)
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.h.is_finite() && self.h > 0.0, || {
            format!("band spacing h must be positive, got {}", self.h)
        })?;
        ensure(self.delta.is_finite() && self.delta > 0.0, || {
            format!("band delta must be positive, got {}", self.delta)
        })?;
        for (index, &eta) in self.eta.iter().enumerate() {
            if !eta.is_finite() || !is_multiple(eta, self.h) {
                return Err(Error::EtaOffGrid {
                    index,
                    eta,
                    h: self.h,
                });
            }
        }
        Ok(())
    }
}

/// Empirical-Bayes hyperparameters ρ = (γ, β, σ²).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub gamma: f64,
    pub beta: f64,
    pub sigma2: f64,
}

impl Hyperparameters {
    pub fn new(gamma: f64, beta: f64, sigma2: f64) -> Result<Self> {
        let rho = Self {
            gamma,
            beta,
            sigma2,
        };
        rho.validate()?;
        Ok(rho)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        ensure(ok(self.gamma) && ok(self.beta) && ok(self.sigma2), || {
            format!("hyperparameters must be strictly positive, got {self:?}")
        })
    }

    /// γ̃ = 2σ²γ, the ridge added to K in the weight iterations.
    pub fn gamma_tilde(&self) -> f64 {
        2.0 * self.sigma2 * self.gamma
    }

    pub fn to_log(&self) -> [f64; 3] {
        [self.gamma.ln(), self.beta.ln(), self.sigma2.ln()]
    }

    pub fn from_log(x: &[f64]) -> Self {
        Self {
            gamma: x[0].exp(),
            beta: x[1].exp(),
            sigma2: x[2].exp(),
        }
    }
}

/// One Lebesgue-sampled experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub input: ZohInput,
    pub bands: BandSequence,
    /// Noisy output before quantization, only for the oracle baseline.
    #[serde(default, with = "opt_f64_vec", skip_serializing_if = "Option::is_none")]
    pub oracle_z: Option<Vec<f64>>,
    /// Lebesgue samples `(t_l, y_L(t_l))`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub events: Option<Vec<(f64, f64)>>,
}

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    schema_version: u32,
    #[serde(flatten)]
    dataset: Dataset,
}

#[derive(Serialize)]
struct DatasetFileRef<'a> {
    schema_version: u32,
    #[serde(flatten)]
    dataset: &'a Dataset,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.bands.len()
    }

    pub fn delta(&self) -> f64 {
        self.bands.delta
    }

    pub fn validate(&self) -> Result<()> {
        self.input.validate()?;
        self.bands.validate()?;
        ensure(!self.bands.is_empty(), || "dataset has no output bands".into())?;
        self.input.hold_ratio(self.bands.delta)?;
        if let Some(z) = &self.oracle_z {
            if z.len() != self.bands.len() {
                return Err(Error::LengthMismatch {
                    what: "oracle_z",
                    got: z.len(),
                    expected: self.bands.len(),
                });
            }
            for (index, &zi) in z.iter().enumerate() {
                if !zi.is_finite() || !self.bands.contains(index, zi) {
                    return Err(Error::OracleOutOfBand {
                        index,
                        z: zi,
                        lower: self.bands.lower(index),
                        upper: self.bands.upper(index),
                    });
                }
            }
        }
        if let Some(ev) = &self.events {
            ensure(ev.windows(2).all(|w| w[0].0 < w[1].0), || {
                "event times must be strictly increasing".into()
            })?;
            ensure(
                ev.iter().all(|&(t, y)| t.is_finite() && y.is_finite()),
                || "event times and values must be finite".into(),
            )?;
        }
        Ok(())
    }
}

/// Writes `ds` as JSON. The file is written to a sibling temporary and renamed
/// into place, so a failed write leaves nothing behind at `path`.
pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let body = serde_json::to_string_pretty(&DatasetFileRef {
        schema_version: SCHEMA_VERSION,
        dataset: ds,
    })
    .map_err(|e| Error::Numeric(format!("serializing dataset: {e}")))?;
    write_atomic(path, body.as_bytes())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: DatasetFile = serde_json::from_str(&text).map_err(|source| Error::Parse {
        path: path.to_path_buf(),
        source,
    })?;
    if file.schema_version != SCHEMA_VERSION {
        return Err(Error::SchemaVersion(file.schema_version));
    }
    file.dataset.validate()?;
    Ok(file.dataset)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

/// Doubles written with 17 significant digits (`{:.16e}`), which round-trips
/// every finite f64 exactly.
pub(crate) mod f64_vec {
    use serde::ser::SerializeSeq;
    use serde::{Deserialize, Deserializer, Serializer};
    use serde_json::value::RawValue;

    pub fn format(x: f64) -> String {
        format!("{x:.16e}")
    }

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(v.len()))?;
        for &x in v {
            if x.is_finite() {
                let raw = RawValue::from_string(format(x)).map_err(serde::ser::Error::custom)?;
                seq.serialize_element(&raw)?;
            } else {
                return Err(serde::ser::Error::custom("non-finite value in array"));
            }
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<f64>::deserialize(d)
    }
}

pub(crate) mod opt_f64_vec {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Vec<f64>>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(v) => super::f64_vec::serialize(v, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<f64>>, D::Error> {
        Option::<Vec<f64>>::deserialize(d)
    }
}
