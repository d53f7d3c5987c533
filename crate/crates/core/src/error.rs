use thiserror::Error;

/// Errors raised anywhere in the fitting and screening pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("time {t} outside domain [{lo}, {hi}]")]
    Domain { t: f64, lo: f64, hi: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("uninformative knot placement: {0}")]
    UninformativeKnots(String),

    #[error("rank-deficient design: {0}")]
    RankDeficient(String),

    #[error("degenerate iteration: {0}")]
    Degenerate(String),

    #[error("component {component} failed to converge in {max_iter} iterations on every restart (best objective {best_objective:e})")]
    NonConvergence {
        component: usize,
        max_iter: usize,
        best_objective: f64,
        trace: Vec<f64>,
    },

    #[error("insufficient data: need at least {needed} observations, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("csv: {0}")]
    Csv(String),

    #[error("model file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Data,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::RankDeficient(_)
            | Error::Degenerate(_)
            | Error::NonConvergence { .. } => ErrorClass::Numerical,
            _ => ErrorClass::Data,
        }
    }

    /// Short stable identifier for machine-parsable error lines.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Domain { .. } => "domain",
            Error::InvalidInput(_) => "invalid_input",
            Error::UninformativeKnots(_) => "uninformative_knots",
            Error::RankDeficient(_) => "rank_deficient",
            Error::Degenerate(_) => "degenerate",
            Error::NonConvergence { .. } => "non_convergence",
            Error::InsufficientData { .. } => "insufficient_data",
            Error::Csv(_) => "csv",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
