use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("estimate table is empty")]
    EmptyTable,

    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),

    #[error("empty label at row {0}")]
    EmptyLabel(usize),

    /// Negative, missing or unparsable standard error.
    #[error("NegativeOrMissingSE: {0}")]
    NegativeOrMissingSe(String),

    #[error("standard error of `{0}` is zero but the row is not flagged as a known value")]
    UnflaggedZeroSe(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid correlation matrix: {0}")]
    InvalidCorrelation(String),

    #[error("matrix is not positive semidefinite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("infeasible polytope: {0}")]
    InfeasiblePolytope(String),

    #[error("allocation violates the policy space: {0}")]
    InfeasibleAllocation(String),

    #[error("{what} did not converge in {iterations} iterations (best estimate {best:e})")]
    IterationLimit {
        what: &'static str,
        iterations: usize,
        best: f64,
    },

    #[error("bootstrap solver failed on {failed} of {draws} draws")]
    SolverFailures { failed: usize, draws: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("policy class too large: {count} policies exceeds cap {cap}")]
    PolicyCapExceeded { count: u128, cap: u64 },

    #[error("invalid propensities: {0}")]
    InvalidPropensity(String),

    #[error("need at least two effective units or clusters, found {0}")]
    InsufficientUnits(usize),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable identifier printed by the command-line tool.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::EmptyTable => "EmptyTable",
            Error::DuplicateLabel(_) => "DuplicateLabel",
            Error::EmptyLabel(_) => "EmptyLabel",
            Error::NegativeOrMissingSe(_) => "NegativeOrMissingSE",
            Error::UnflaggedZeroSe(_) => "UnflaggedZeroSE",
            Error::NonFinite(_) => "NonFinite",
            Error::InvalidCorrelation(_) => "InvalidCorrelation",
            Error::NotPsd { .. } => "NotPSD",
            Error::InfeasiblePolytope(_) => "InfeasiblePolytope",
            Error::InfeasibleAllocation(_) => "InfeasibleAllocation",
            Error::IterationLimit { .. } => "IterationLimit",
            Error::SolverFailures { .. } => "SolverFailures",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::PolicyCapExceeded { .. } => "PolicyCapExceeded",
            Error::InvalidPropensity(_) => "InvalidPropensity",
            Error::InsufficientUnits(_) => "InsufficientUnits",
            Error::Parse(_) => "ParseError",
            Error::Io(_) => "IoError",
            Error::Csv(_) => "CsvError",
            Error::Json(_) => "JsonError",
        }
    }

    /// True for errors caused by invalid user input rather than numerical failure.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::IterationLimit { .. } | Error::SolverFailures { .. } | Error::Io(_)
        )
    }
}
