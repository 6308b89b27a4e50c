use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum ElkError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("newton iterations did not converge after {iterations} steps (gradient max-norm {grad_norm:e})")]
    NotConverged { iterations: usize, grad_norm: f64 },

    #[error("objective is not finite: {0}")]
    NonFiniteObjective(String),

    #[error("malformed input at row {row}: {message}")]
    MalformedRow { row: usize, message: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("study failed: {0}")]
    Study(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ElkError {
    /// Stable machine-readable code, used by the CLI and the C API.
    pub fn code(&self) -> &'static str {
        match self {
            ElkError::InvalidArgument(_) => "E_INVALID_ARGUMENT",
            ElkError::DimensionMismatch(_) => "E_DIMENSION",
            ElkError::NotPositiveDefinite { .. } => "E_NOT_POSITIVE_DEFINITE",
            ElkError::Numerical(_) => "E_NUMERICAL",
            ElkError::NotConverged { .. } => "E_NOT_CONVERGED",
            ElkError::NonFiniteObjective(_) => "E_NON_FINITE_OBJECTIVE",
            ElkError::MalformedRow { .. } => "E_MALFORMED_ROW",
            ElkError::Parse(_) => "E_PARSE",
            ElkError::Study(_) => "E_STUDY",
            ElkError::Io(_) => "E_IO",
        }
    }
}

impl From<csv::Error> for ElkError {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            match e.into_kind() {
                csv::ErrorKind::Io(io) => ElkError::Io(io),
                other => ElkError::Parse(format!("{other:?}")),
            }
        } else {
            ElkError::Parse(e.to_string())
        }
    }
}

impl From<serde_json::Error> for ElkError {
    fn from(e: serde_json::Error) -> Self {
        ElkError::Parse(e.to_string())
    }
}

impl From<toml::de::Error> for ElkError {
    fn from(e: toml::de::Error) -> Self {
        ElkError::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, ElkError>;

macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::error::ElkError::InvalidArgument(format!($($arg)*))
    };
}
pub(crate) use invalid;
