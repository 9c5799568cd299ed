use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("regressor cross-product is singular")]
    SingularDesign,
    #[error("interval of length {length} is too short (minimum {min})")]
    IntervalTooShort { length: usize, min: usize },
    #[error("interval ending at {end} with length {length} needs {needed} observations but only {available} precede it")]
    InsufficientHistory {
        end: usize,
        length: usize,
        needed: usize,
        available: usize,
    },
    #[error("estimated noise covariance is not positive definite")]
    DegenerateCovariance,
    #[error("noise covariance is not positive definite")]
    NonPositiveDefiniteSigma,
    #[error("VAR parameters are not stable (spectral radius {spectral_radius:.6})")]
    UnstableParams { spectral_radius: f64 },
    #[error("dimension mismatch: {0}")]
    BadDimension(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("row {row} of the raw decomposition sums to zero")]
    ZeroVarianceRow { row: usize },
    #[error("adaptive result at tau={tau} carries no LR trace")]
    MissingTrace { tau: usize },
    #[error("interval index {k} outside [1, {k_max}]")]
    IndexOutOfRange { k: usize, k_max: usize },
    #[error("no pairs available for aggregation")]
    EmptyPairSet,
    #[error("critical value search did not converge at step {step}")]
    NonConvergence { step: usize },
    #[error("{failed} of {total} Monte-Carlo samples failed (limit {limit})")]
    TooManyFailures {
        failed: usize,
        total: usize,
        limit: usize,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("non-numeric value {value:?} at line {line}, column {column}")]
    NonNumeric {
        line: usize,
        column: usize,
        value: String,
    },
    #[error("gap in time index: {0}")]
    Gap(String),
    #[error("duplicate time label {0}")]
    DuplicateTime(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{context}: {source}")]
    Context { context: String, source: Box<Error> },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Wraps the error with a description of where it happened.
    pub fn context(self, context: impl Into<String>) -> Error {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Context { source, .. } => source.kind(),
            Error::Config(_) | Error::InvalidParams(_) | Error::BadDimension(_) => ErrorKind::Config,
            Error::Parse { .. }
            | Error::NonNumeric { .. }
            | Error::Gap(_)
            | Error::DuplicateTime(_)
            | Error::Io(_)
            | Error::Json(_)
            | Error::Csv(_)
            | Error::InsufficientHistory { .. }
            | Error::IntervalTooShort { .. } => ErrorKind::Data,
            _ => ErrorKind::Numerical,
        }
    }
}
