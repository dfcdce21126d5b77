use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("matrix is not Hermitian (max asymmetry {asymmetry:.3e})")]
    NotHermitian { asymmetry: f64 },

    #[error("matrix is indefinite (smallest eigenvalue {min_eigenvalue:.3e})")]
    Indefinite { min_eigenvalue: f64 },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(&'static str),

    #[error("precoder is ill-conditioned (condition number {condition:.3e})")]
    IllConditioned { condition: f64 },

    #[error("normalization violated: {0}")]
    Normalization(String),

    #[error("degenerate activation: {0}")]
    DegenerateActivation(&'static str),

    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("sample covariance is singular; increase the sample count")]
    SingularCovariance,

    #[error("training diverged at step {step}: loss was non-finite for {consecutive} consecutive steps")]
    Diverged { step: usize, consecutive: usize },

    #[error("missing checkpoint for M={m}, L={l}")]
    MissingCheckpoint { m: usize, l: usize },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("I/O error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 1 config, 2 numerical, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) | Error::DimensionMismatch { .. } => 1,
            Error::Io { .. } | Error::MissingCheckpoint { .. } | Error::Checkpoint(_) => 3,
            _ => 2,
        }
    }
}
