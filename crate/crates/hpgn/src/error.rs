use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Shape or dimension constraints violated (mismatched tensors, bad extents).
    #[error("dimension error: {0}")]
    Dim(String),

    /// API contract violated (non-scalar loss, unbound parameter, ...).
    #[error("contract error: {0}")]
    Contract(String),

    /// Backward was already run on this tape.
    #[error("stale tape: backward has already consumed this tape")]
    StaleTape,

    /// Non-finite values or other numeric failures.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Bad configuration file or incompatible option combination.
    #[error("config error: {0}")]
    Config(String),

    /// Dataset directory problems (unmatched or malformed pairs).
    #[error("ingest error: {0}")]
    Ingest(String),

    /// Checkpoint container problems (bad magic, version, missing params).
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;
