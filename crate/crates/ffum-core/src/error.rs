use thiserror::Error;

/// Errors produced anywhere in the engine. Variants map onto the exit-code
/// policy of the command-line front end: `Config` is a rejected experiment
/// description, `NonFinite` is a mid-run numeric failure, everything else is
/// a programming or environment problem surfaced as a plain failure.
#[derive(Debug, Error)]
pub enum Error {
    /// Operands with incompatible shapes were handed to a graph op.
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    /// A NaN or infinity appeared in a tensor, gradient, or parameter vector.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    /// An argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// An API was called in a way its contract forbids (wrong root shape,
    /// label out of range, mismatched lengths).
    #[error("usage error: {0}")]
    Usage(String),

    /// An experiment description that cannot be run as stated.
    #[error("configuration error: {0}")]
    Config(String),

    /// A federation round could not proceed (for example, no client
    /// contributed an update).
    #[error("protocol error: {0}")]
    Protocol(String),

    /// A dataset file could not be decoded. Offset is the byte position at
    /// which decoding failed.
    #[error("ingestion error at byte {offset}: {message}")]
    Ingest { message: String, offset: u64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn non_finite(context: impl Into<String>) -> Self {
        Error::NonFinite { context: context.into() }
    }
}
