use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in `{field}`: expected {expected}, got {actual}")]
    Dimension {
        field: &'static str,
        expected: String,
        actual: String,
    },

    #[error("`{field}` is not symmetric (relative asymmetry {asymmetry:e})")]
    NotSymmetric { field: &'static str, asymmetry: f64 },

    #[error("`{field}` is not positive definite (minimum eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite {
        field: &'static str,
        min_eigenvalue: f64,
    },

    #[error("`D` must have full row rank ({rank} < {rows})")]
    RankDeficient { rank: usize, rows: usize },

    #[error("invalid quantizer: {0}")]
    Quantizer(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index {index} out of range (size {size})")]
    OutOfRange { index: usize, size: usize },

    #[error("NaN coordinate in input point")]
    NanInput,

    #[error("invalid probability vector: {0}")]
    InvalidPmf(String),

    #[error("cell {cell}: {source}")]
    Cell {
        cell: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("window k={k}: {source}")]
    Window {
        k: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(field: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Dimension {
            field,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// True for failures caused by malformed inputs rather than numerics.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::Dimension { .. }
            | Error::NotSymmetric { .. }
            | Error::RankDeficient { .. }
            | Error::Quantizer(_)
            | Error::InvalidArgument(_)
            | Error::OutOfRange { .. }
            | Error::NanInput
            | Error::InvalidPmf(_)
            | Error::Json(_) => true,
            Error::NotPositiveDefinite { field, .. } => *field != "lifted covariance",
            Error::Cell { source, .. } | Error::Window { source, .. } => source.is_input_error(),
            Error::Io(_) => false,
        }
    }
}
