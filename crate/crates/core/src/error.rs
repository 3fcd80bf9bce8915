use std::path::PathBuf;

use crate::data::Scope;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("row {row}, column {column}: cannot parse {value:?} as a real number")]
    Parse {
        row: usize,
        column: usize,
        value: String,
    },

    #[error("row {row}: expected {expected} fields, found {found}")]
    ColumnCount {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("malformed csv: {0}")]
    Csv(String),

    #[error("dataset has no labeled rows")]
    NoLabeledRows,

    #[error("row {row} is labeled but follows an unlabeled row")]
    LabelOrdering { row: usize },

    #[error("feature column {column} is constant over all rows")]
    ConstantColumn { column: usize },

    #[error("the {0} scope contains no rows")]
    EmptyScope(Scope),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:.3e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("matrix is not positive semi-definite (smallest eigenvalue {min_eigenvalue:.3e})")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("objective is unbounded below along coordinate {coordinate} (zero curvature, |b_j| > lambda)")]
    Unbounded { coordinate: usize },

    #[error("support of size {size} is too large for sign-pattern enumeration (max {max})")]
    EnumerationTooLarge { size: usize, max: usize },

    #[error("cone subproblem did not converge (gap {gap:.3e} after {iterations} iterations)")]
    SubproblemNonConvergence { gap: f64, iterations: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("trial {trial_index} (seed {seed}) is invalid: {reason}")]
    InvalidTrial {
        trial_index: u64,
        seed: u64,
        reason: String,
    },

    #[error("invalid experiment config: {0}")]
    Config(String),

    #[error("serialization failed: {0}")]
    Serialize(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
