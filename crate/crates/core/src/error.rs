use thiserror::Error;

/// Errors raised by the simulator's operations.
///
/// Verification outcomes are never errors: a failed check is a
/// [`Verdict`](crate::model::Verdict). Errors are reserved for violated
/// preconditions and malformed inputs.
#[derive(Debug, Error)]
pub enum Error {
    #[error("encoding error: {0}")]
    Encoding(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("optimizer family `{0}` is outside the allowed set")]
    UnsupportedOptimizer(String),

    #[error("workload kind mismatch: expected {expected}, got {actual}")]
    KindMismatch { expected: String, actual: String },

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("division by zero: {0}")]
    DivisionByZero(&'static str),

    #[error("chip {chip_id} refused: {reason}")]
    Refused { chip_id: String, reason: String },

    #[error("unknown scenario behavior `{0}`")]
    UnknownBehavior(String),

    #[error("unknown oracle kind `{0}`")]
    UnknownOracle(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
