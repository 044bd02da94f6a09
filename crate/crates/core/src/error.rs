use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure classes, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Io,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch on {axis}: expected {expected}, found {found}")]
    Shape {
        axis: String,
        expected: usize,
        found: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch} (last finite loss: {last_finite_loss:?})")]
    Divergence {
        epoch: usize,
        last_finite_loss: Option<f64>,
    },

    #[error("target not found: {0}")]
    TargetNotFound(String),

    #[error("no applicable skill: {0}")]
    NoApplicableSkill(String),

    #[error("vision-language client failed after {attempts} attempt(s): {message}")]
    Client { attempts: usize, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn shape(axis: impl Into<String>, expected: usize, found: usize) -> Self {
        Error::Shape {
            axis: axis.into(),
            expected,
            found,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::NonFinite(_) | Error::Divergence { .. } => ErrorKind::Numerical,
            Error::Io(_) | Error::Client { .. } => ErrorKind::Io,
            Error::Format(_) | Error::Json(_) => ErrorKind::Io,
            _ => ErrorKind::Validation,
        }
    }
}
