use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {what} at row {row}, column {col}")]
    NonFinite {
        what: &'static str,
        row: usize,
        col: usize,
    },

    #[error("too few samples: need at least {needed}, found {found}")]
    TooFewSamples { needed: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The regression has at least as many unknowns as usable rows.
    #[error("unidentifiable regression: {rows} samples cannot determine {columns} coefficients")]
    Unidentifiable { rows: usize, columns: usize },

    /// Columns (0-based, in the order supplied) that are numerically dependent on the others.
    #[error("singular design: columns {columns:?} are numerically dependent")]
    Singular { columns: Vec<usize> },

    #[error("coordinate descent did not converge after {sweeps} sweeps (last max change {max_change:e})")]
    NonConvergence { sweeps: usize, max_change: f64 },

    #[error("covariance matrix is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("integer overflow computing {0}")]
    Overflow(&'static str),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
