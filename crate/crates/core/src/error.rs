//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by dataset validation, numerical routines, and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate functional sample for subject '{subject}': need at least 2 observation points, found {found}")]
    DegenerateSample { subject: String, found: usize },

    #[error("invalid functional sample for subject '{subject}': {reason}")]
    InvalidSample { subject: String, reason: String },

    #[error("invalid dataset '{id}': {reason}")]
    InvalidDataset { id: String, reason: String },

    #[error("empty dataset: at least one subject is required")]
    EmptyDataset,

    #[error("insufficient sample size: need at least {needed} subjects, found {found}")]
    InsufficientSample { needed: usize, found: usize },

    #[error("covariance matrix is not symmetric: max |G - G^T| = {max_asymmetry:.3e} exceeds 1e-8")]
    NonSymmetric { max_asymmetry: f64 },

    #[error("dimension mismatch: {context} (expected {expected}, found {found})")]
    Dimension {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid parameter {name}: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    #[error("domain error in {op}: {reason}")]
    Domain { op: &'static str, reason: String },

    #[error("numerical failure while updating {block}: non-finite value encountered")]
    NumericalFailure { block: String },

    #[error("design has no usable penalized columns (lambda_max is not positive)")]
    DegenerateDesign,

    #[error("insufficient data for L-moments: need at least {needed} values, found {found}")]
    InsufficientData { needed: usize, found: usize },

    #[error("too many missing window estimates for subject '{subject}': {missing} of {total} grid points ({pct:.1}%) exceed the 5% budget")]
    TooManyMissing {
        subject: String,
        missing: usize,
        total: usize,
        pct: f64,
    },

    #[error("unknown covariate '{0}' in new data")]
    UnknownCovariate(String),

    #[error("missing covariate '{0}' required by the model")]
    MissingCovariate(String),

    #[error("subject mismatch: {0}")]
    SubjectMismatch(String),

    #[error("covariate '{id}': {source}")]
    Covariate {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("Monte Carlo run aborted: {failed} of {total} replicates failed (> 10% budget); first failure: {first}")]
    ReplicateBudget {
        failed: usize,
        total: usize,
        first: String,
    },

    #[error("model file format error: {0}")]
    ModelFormat(String),

    #[error("parse error at line {line} of {file}: {reason}")]
    Parse {
        file: String,
        line: usize,
        reason: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Attach a covariate id to an error bubbling out of the per-covariate pipeline.
    pub fn in_covariate(self, id: &str) -> Error {
        Error::Covariate {
            id: id.to_string(),
            source: Box::new(self),
        }
    }

    /// True for errors caused by invalid inputs rather than numerical trouble.
    /// The CLI maps these to exit code 2; numerical failures map to exit code 3.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::NumericalFailure { .. } | Error::ReplicateBudget { .. } => false,
            Error::Covariate { source, .. } => source.is_input_error(),
            _ => true,
        }
    }
}
