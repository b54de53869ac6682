use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure class, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Input,
    Numerical,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("rank-deficient design: condition number {condition:.3e} exceeds {limit:.1e}")]
    RankDeficient { condition: f64, limit: f64 },

    #[error(
        "fold {fold}: weak residualization, sum of squared policy residuals {sum_sq:.3e} is below {threshold:.3e}"
    )]
    WeakResidualization { fold: usize, sum_sq: f64, threshold: f64 },

    #[error("singular population projection: {0}")]
    SingularProjection(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("missing value at row {row}, column '{column}'")]
    MissingValue { row: usize, column: String },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidInput(_) | Error::DimensionMismatch(_) | Error::MissingValue { .. } | Error::NonFinite(_) => {
                ErrorKind::Input
            }
            Error::RankDeficient { .. }
            | Error::WeakResidualization { .. }
            | Error::SingularProjection(_)
            | Error::Numerical(_) => ErrorKind::Numerical,
            Error::Csv(e) if e.is_io_error() => ErrorKind::Io,
            Error::Csv(_) | Error::Json(_) => ErrorKind::Input,
            Error::Io(_) => ErrorKind::Io,
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
