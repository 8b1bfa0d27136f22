use ope_core::error::OpeError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid config: {0}")]
    Config(String),

    #[error("cell ({estimator}, n = {n}, rep = {rep}) failed: {source}")]
    Cell {
        estimator: String,
        n: usize,
        rep: usize,
        #[source]
        source: OpeError,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed results file {path}: {message}")]
    Results { path: String, message: String },

    #[error(transparent)]
    Core(#[from] OpeError),
}

impl LabError {
    pub fn kind(&self) -> &'static str {
        match self {
            LabError::Config(_) => "config",
            LabError::Cell { .. } => "cell",
            LabError::Io { .. } => "io",
            LabError::Results { .. } => "results",
            LabError::Core(e) => e.kind(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config(_) => 2,
            LabError::Io { .. } | LabError::Results { .. } | LabError::Core(OpeError::Io { .. }) => 3,
            LabError::Core(OpeError::Parse(_) | OpeError::InvalidArgument(_) | OpeError::InvalidInstance(_)) => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        LabError::Io { path: path.display().to_string(), source }
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
