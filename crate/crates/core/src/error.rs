use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("class {class} has no samples")]
    EmptyClass { class: usize },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("covariance diagonal entry {index} is not positive ({value})")]
    NonPositiveDiagonal { index: usize, value: f64 },

    #[error("cholesky factorization failed at pivot {pivot} (value {value}); matrix is not positive definite")]
    CholeskyFailure { pivot: usize, value: f64 },

    #[error("class gaussian carries no factorization")]
    FactorizationMissing,

    #[error(
        "mahalanobis mode requires one gaussian per class ({classes} classes, {found} gaussians)"
    )]
    MissingGaussians { classes: usize, found: usize },

    #[error("no gaussian for observed label {label}")]
    MissingGaussian { label: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("text separation loss needs at least two prototypes, got {count}")]
    TooFewPrototypes { count: usize },

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error("class {class} has {available} samples, need more than {shots}")]
    InsufficientSamples {
        class: usize,
        available: usize,
        shots: usize,
    },

    #[error("format error at byte {offset}: {detail}")]
    Format { offset: u64, detail: String },

    #[error("empty file")]
    EmptyFile,

    #[error("non-finite function evaluation")]
    NonFiniteEvaluation,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    /// Whether the failure is numerical rather than a data or input problem.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::CholeskyFailure { .. }
                | Error::NonPositiveDiagonal { .. }
                | Error::NonFiniteLoss { .. }
                | Error::NonFiniteEvaluation
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
