use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the factorization toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("signal too short: {samples} samples, need at least {needed}")]
    SignalTooShort { samples: usize, needed: usize },

    #[error("config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("filterbank degenerate: {0}")]
    FilterbankDegenerate(String),

    #[error("cannot normalize zero vector")]
    ZeroVector,

    #[error("cannot score zero vector")]
    ZeroScoreVector,

    #[error("at least one iteration required")]
    NoIterations,

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("label error: {0}")]
    Label(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("model kind error: expected {expected}, found {found}")]
    ModelKind { expected: String, found: String },

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("utterance too short: {frames} frames, need at least {needed}")]
    UtteranceTooShort { frames: usize, needed: usize },

    #[error("cascade order violation: {0}")]
    CascadeOrder(String),

    #[error("cascade mismatch: {0}")]
    CascadeMismatch(String),

    #[error("no frames")]
    NoFrames,

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("no data: {0}")]
    NoData(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("protocol infeasible: {0}")]
    ProtocolInfeasible(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("missing artifact {}: {reason}", path.display())]
    MissingArtifact { path: PathBuf, reason: String },

    #[error("write error: {0}")]
    Write(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
