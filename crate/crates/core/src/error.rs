use thiserror::Error;

pub type Result<T> = std::result::Result<T, OpeError>;

#[derive(Debug, Error)]
pub enum OpeError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("propensity at state {state} is not normalized: sum = {sum}")]
    NonNormalizedPropensity { state: f64, sum: f64 },

    #[error("zero propensity at observed pair (x = {state}, a = {action})")]
    ZeroPropensity { state: f64, action: usize },

    #[error("quadrature did not converge: achieved error estimate {achieved:e} after {subdivisions} subdivisions")]
    Quadrature { achieved: f64, subdivisions: usize },

    #[error("linear system is singular (condition estimate {condition:e})")]
    Singular { condition: f64 },

    #[error("first-stage fit on fold {fold} failed: {source}")]
    FirstStage {
        fold: usize,
        #[source]
        source: Box<OpeError>,
    },

    #[error("Monte Carlo profile is not monotone beyond MC error at r = {radius}; increase reps")]
    NonMonotoneProfile { radius: f64 },

    #[error("support violation: q is zero at atom {atom} where p = {p}")]
    Support { atom: usize, p: f64 },

    #[error("certificate verification failed: {0}")]
    Certificate(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl OpeError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        OpeError::InvalidArgument(msg.into())
    }

    /// Short machine-readable tag for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            OpeError::InvalidArgument(_) => "invalid_argument",
            OpeError::InvalidInstance(_) => "invalid_instance",
            OpeError::NonNormalizedPropensity { .. } => "non_normalized_propensity",
            OpeError::ZeroPropensity { .. } => "zero_propensity",
            OpeError::Quadrature { .. } => "quadrature",
            OpeError::Singular { .. } => "singular",
            OpeError::FirstStage { .. } => "first_stage",
            OpeError::NonMonotoneProfile { .. } => "non_monotone_profile",
            OpeError::Support { .. } => "support",
            OpeError::Certificate(_) => "certificate",
            OpeError::Parse(_) => "parse",
            OpeError::Io { .. } => "io",
        }
    }
}
