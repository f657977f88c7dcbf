use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: bad magic tag {found:?}, expected \"DLF1\"")]
    BadMagic { path: PathBuf, found: [u8; 4] },

    #[error("{path}: header declares {rows}x{cols} ({expected} bytes of payload) but found {actual}")]
    SizeMismatch {
        path: PathBuf,
        rows: usize,
        cols: usize,
        expected: usize,
        actual: usize,
    },

    #[error("{context}: non-finite value at ({row}, {col})")]
    NonFinite {
        context: String,
        row: usize,
        col: usize,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("invalid source space: {0}")]
    InvalidSourceSpace(String),

    #[error("invalid sensor array: {0}")]
    InvalidSensorArray(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("source {index} lies outside the conducting sphere (radius fraction {fraction:.6})")]
    SourceOutsideSphere { index: usize, fraction: f64 },

    #[error("sensor {index} lies inside the conducting sphere")]
    SensorInsideSphere { index: usize },

    #[error("lead field has zero power; input covariance scale is undefined")]
    ZeroLeadField,

    #[error("Lyapunov iteration did not converge after {iterations} doublings (relative residual {residual:e})")]
    LyapunovNonConvergence { iterations: usize, residual: f64 },

    #[error("{what} is not positive definite")]
    NotPositiveDefinite { what: &'static str },

    #[error("{what} is numerically singular (condition estimate {condition:e})")]
    Singular { what: &'static str, condition: f64 },

    #[error("STS window [{lo}, {hi}] is outside [1, {horizon}]")]
    WindowOutOfRange { lo: i64, hi: i64, horizon: usize },

    #[error("offset {offset} is outside the mapping's range [-{k}, {k}]")]
    OffsetOutOfRange { offset: i64, k: usize },

    #[error("insufficient samples: {available} available, {required} required")]
    InsufficientSamples { available: usize, required: usize },

    #[error("incompatible sensitivity maps: {0}")]
    IncompatibleMaps(String),

    #[error("unknown source model {0:?}")]
    UnknownModel(String),

    #[error("source model {0:?} is already registered")]
    DuplicateModel(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(context: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Dimension {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
