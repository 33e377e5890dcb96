use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input violates a documented invariant.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("eta not on grid: eta[{index}] = {eta} is not a multiple of h = {h}")]
    EtaOffGrid { index: usize, eta: f64, h: f64 },

    #[error("oracle_z[{index}] = {z} lies outside its band [{lower}, {upper})")]
    OracleOutOfBand {
        index: usize,
        z: f64,
        lower: f64,
        upper: f64,
    },

    #[error("length mismatch: {what} has {got} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },

    #[error("unsupported dataset schema version {0}")]
    SchemaVersion(u32),

    #[error("matrix is not positive definite: {context} (min eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite {
        context: &'static str,
        min_eigenvalue: f64,
    },

    #[error("band unreachable at coordinate {index}: conditional mass underflows")]
    BandUnreachable { index: usize },

    #[error("EM objective increased from {before} to {after} at iteration {iteration}")]
    NonMonotone {
        iteration: usize,
        before: f64,
        after: f64,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for input/invariant problems, false for numeric breakdowns.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation(_)
                | Error::EtaOffGrid { .. }
                | Error::OracleOutOfBand { .. }
                | Error::LengthMismatch { .. }
                | Error::SchemaVersion(_)
                | Error::Parse { .. }
        )
    }

    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. }
                | Error::BandUnreachable { .. }
                | Error::NonMonotone { .. }
                | Error::Numeric(_)
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Validation(msg()))
    }
}
