use std::fmt;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller supplied an argument outside an operation's contract.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Malformed EDF input. `offset` is the byte offset of the offending field.
    #[error("EDF parse error in field `{field}` at byte {offset}: {reason}")]
    Parse {
        field: String,
        offset: usize,
        reason: String,
    },

    /// A recording could not be turned into usable epochs.
    #[error("ingest error: {0}")]
    Ingest(String),

    /// The optimizer produced nothing usable.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl fmt::Display) -> Error {
    Error::InvalidArgument(msg.to_string())
}
