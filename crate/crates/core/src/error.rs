use thiserror::Error;

/// Errors produced by the encoder, trainer, collision lab and file formats.
#[derive(Debug, Error)]
pub enum Error {
    /// A value lies outside the domain an operation accepts.
    #[error("domain error in `{field}`: {message}")]
    Domain { field: &'static str, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("unknown species `{0}`")]
    UnknownSpecies(String),

    #[error("empty {0}")]
    Empty(&'static str),

    /// Training produced a NaN or infinity. `tensor` names the first offending buffer.
    #[error("non-finite value in `{tensor}` at step {step}")]
    NonFinite { tensor: String, step: usize },

    #[error("dataset line {line}: {message}")]
    Dataset { line: usize, message: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("embedding width mismatch: expected {expected}, checkpoint produces {found}")]
    WidthMismatch { expected: usize, found: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn domain(field: &'static str, message: impl Into<String>) -> Self {
        Error::Domain {
            field,
            message: message.into(),
        }
    }
}
