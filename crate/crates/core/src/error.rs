use thiserror::Error;

/// Errors raised across the simulator and the estimators.
#[derive(Debug, Error)]
pub enum Error {
    /// A scalar argument is outside its admissible range.
    #[error("domain error: {0}")]
    Domain(String),

    /// Operator or state dimensions do not agree.
    #[error("shape error: expected {expected}, found {found}")]
    Shape { expected: String, found: String },

    /// An input failed a physical or structural validity check.
    #[error("validation error: {0}")]
    Validation(String),

    /// A state carries weight outside the truncated Fock space an operation needs.
    #[error("truncation error: {weight:.3e} of the state lies beyond n_max for this operation")]
    Truncation { weight: f64 },

    /// The requested herald outcome has zero probability.
    #[error("herald impossible: click probability is zero for {0}")]
    HeraldImpossible(String),

    /// An estimate cannot be formed from the supplied counts.
    #[error("undefined estimate: {0}")]
    UndefinedEstimate(String),

    /// The measurement setting set does not determine the state.
    #[error("incomplete measurement: {0}")]
    Incomplete(String),

    /// Calibration targets cannot be reached by the forward model.
    #[error("infeasible targets: {0}")]
    Infeasible(String),

    /// Configuration could not be parsed or failed validation.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(expected: impl ToString, found: impl ToString) -> Self {
        Error::Shape { expected: expected.to_string(), found: found.to_string() }
    }

    /// Stable machine-readable tag for the error family.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Shape { .. } => "shape",
            Error::Validation(_) => "validation",
            Error::Truncation { .. } => "truncation",
            Error::HeraldImpossible(_) => "herald_impossible",
            Error::UndefinedEstimate(_) => "undefined_estimate",
            Error::Incomplete(_) => "incomplete",
            Error::Infeasible(_) => "infeasible",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
