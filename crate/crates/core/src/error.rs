use thiserror::Error;

/// Errors raised across the toolkit.
///
/// Variants are grouped by the class of failure so the command line can map
/// them onto stable exit codes (see [`OsrError::class`]).
#[derive(Debug, Error)]
pub enum OsrError {
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("argument error: {0}")]
    Argument(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("index error: {0}")]
    Index(String),
    #[error("pairing error: {0}")]
    Pairing(String),
    #[error("partition error: {0}")]
    Partition(String),
    #[error("capability error: {0}")]
    Capability(String),
    #[error("precondition error: {0}")]
    Precondition(String),
    #[error("consistency error: {0}")]
    Consistency(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("training diverged at epoch {epoch}, step {step}: {detail}")]
    Diverged { epoch: usize, step: usize, detail: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse failure class used for exit-code mapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

impl OsrError {
    pub fn class(&self) -> ErrorClass {
        match self {
            OsrError::Parameter(_) | OsrError::Config(_) | OsrError::Argument(_) => ErrorClass::Config,
            OsrError::Numerical(_) | OsrError::Diverged { .. } => ErrorClass::Numerical,
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        OsrError::Io { path: path.as_ref().display().to_string(), source }
    }
}

pub type Result<T, E = OsrError> = std::result::Result<T, E>;
