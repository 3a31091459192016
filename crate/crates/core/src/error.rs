use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("non-finite loss in batch {batch} while training {what}")]
    NonFiniteLoss { what: &'static str, batch: usize },

    #[error("invalid state: {0}")]
    State(String),

    #[error("checkpoint version mismatch: file has {found}, this build reads {expected}")]
    VersionMismatch { found: String, expected: String },

    #[error("checkpoint checksum mismatch (expected {expected}, computed {computed})")]
    Checksum { expected: String, computed: String },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("theory validation failed: {0} bound violation(s)")]
    BoundViolation(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 1 config, 2 runtime training, 3 theory violation.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Dimension { .. } | Error::Input(_) => 1,
            Error::BoundViolation(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension { expected, got });
    }
    Ok(())
}
