use thiserror::Error;

/// Errors produced by the simulation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("quadrature did not converge: max change {change:e} after {halvings} halvings (tolerance {tolerance:e})")]
    QuadratureNonConvergence {
        change: f64,
        tolerance: f64,
        halvings: usize,
    },

    #[error("interfering symbol stream exhausted: need index {needed}, have {available}")]
    SymbolStreamExhausted { needed: usize, available: usize },

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("ill-conditioned system at pilot {pilot}: condition estimate {condition:e}")]
    IllConditioned { pilot: usize, condition: f64 },

    #[error("estimator is not stationary: gradient norm {gradient_norm:e} (scale {scale:e}), {increases} perturbations increased the likelihood")]
    StationarityViolation {
        gradient_norm: f64,
        scale: f64,
        increases: usize,
    },

    #[error("S-MAP recursion lost positive definiteness at position {position}")]
    RecursionBreakdown { position: usize },

    #[error("S-MAP enumeration of 4^{n_d} candidates exceeds the budget (n_d <= {cap}); use I-MAP instead")]
    BudgetExceeded { n_d: usize, cap: usize },

    #[error("combiner weights diverge at alpha = 1")]
    DegenerateAlpha,

    #[error("pilot correlation system is singular")]
    SingularInterpolation,

    #[error("insufficient samples: CI half-width {relative_halfwidth:.3} (relative) at position {position} exceeds {limit}")]
    InsufficientSamples {
        position: usize,
        relative_halfwidth: f64,
        limit: f64,
    },

    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization failure: {0}")]
    Serialization(String),
}

impl Error {
    /// Short machine-readable identifier for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidConfig(_) => "invalid_config",
            Error::QuadratureNonConvergence { .. } => "quadrature_non_convergence",
            Error::SymbolStreamExhausted { .. } => "symbol_stream_exhausted",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::IllConditioned { .. } => "ill_conditioned",
            Error::StationarityViolation { .. } => "stationarity_violation",
            Error::RecursionBreakdown { .. } => "recursion_breakdown",
            Error::BudgetExceeded { .. } => "budget_exceeded",
            Error::DegenerateAlpha => "degenerate_alpha",
            Error::SingularInterpolation => "singular_interpolation",
            Error::InsufficientSamples { .. } => "insufficient_samples",
            Error::Io(_) => "io_failure",
            Error::Serialization(_) => "serialization_failure",
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
