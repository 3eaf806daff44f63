use thiserror::Error;

/// Errors raised by estimators, samplers and file ingestion.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter out of domain: {0}")]
    ParameterDomain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty data: {0}")]
    EmptyData(String),

    #[error("degenerate sampler state: {0}")]
    DegenerateState(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("linear system is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("rejection budget exhausted after {0} tries")]
    RejectionBudget(u64),

    #[error("objective decreased from {before} to {after} at iteration {iteration}")]
    ObjectiveDecrease {
        iteration: usize,
        before: f64,
        after: f64,
    },

    #[error("input error: {0}")]
    Input(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures caused by bad user input rather than inference.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Input(_)
                | Error::Io { .. }
                | Error::Csv(_)
                | Error::Shape(_)
                | Error::EmptyData(_)
                | Error::ParameterDomain(_)
        )
    }

    /// Stable machine-readable tag for the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ParameterDomain(_) => "parameter_domain",
            Error::Shape(_) => "shape",
            Error::EmptyData(_) => "empty_data",
            Error::DegenerateState(_) => "degenerate_state",
            Error::InvalidState(_) => "invalid_state",
            Error::UndefinedMetric(_) => "undefined_metric",
            Error::NotPositiveDefinite(_) => "not_positive_definite",
            Error::RejectionBudget(_) => "rejection_budget",
            Error::ObjectiveDecrease { .. } => "objective_decrease",
            Error::Input(_) => "input",
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
