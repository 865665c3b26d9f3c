use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("eigensolver did not converge after {sweeps} sweeps (off-diagonal residual {residual:e})")]
    Convergence { sweeps: usize, residual: f64 },

    #[error("singular covariance: eigenvalue {eigenvalue:e} (index {index}) is below the floor {floor:e}")]
    SingularCovariance {
        index: usize,
        eigenvalue: f64,
        floor: f64,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("inputs are not unit-normalized: row {row} has norm {norm}")]
    NotNormalized { row: usize, norm: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("incompatible checkpoint: found version {found}, expected {expected}")]
    IncompatibleCheckpoint { found: u32, expected: u32 },

    #[error("trace does not match encoder state: {0}")]
    Consistency(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Numeric failures (as opposed to bad input or configuration).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Convergence { .. }
                | Error::SingularCovariance { .. }
                | Error::NonFinite(_)
                | Error::DegenerateInput(_)
                | Error::UndefinedCorrelation(_)
        )
    }
}
