//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by training, solving, generation and persistence.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid parameter {name}: {value} ({reason})")]
    InvalidParam {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("infeasible constraints: {0}")]
    Infeasible(String),

    #[error("QP solver did not converge: residual {residual:.3e} after {iterations} iterations")]
    NoConvergence { residual: f64, iterations: usize },

    #[error("dual variable hit the safety cap {cap:.1e}; problem is badly conditioned")]
    CapHit { cap: f64 },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("unsupported model file schema version {found} (expected {expected})")]
    SchemaVersion { found: u64, expected: u64 },

    #[error("model file error: {0}")]
    ModelFormat(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
