use thiserror::Error;

/// Unified error type for everything that can go wrong between raw input
/// files and a trained model: shape mismatches in the math layer, malformed
/// corpora, bad configuration, numeric blow-ups, and I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// Two tensors fed to `op` had incompatible shapes.
    #[error("shape mismatch in {op}: lhs {lhs:?} vs rhs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A configuration value (file or CLI) is invalid or inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// A file could not be parsed at all (XML structure, header line, ...).
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// One record inside an otherwise well-formed file is bad.
    #[error("bad record {id}: {msg}")]
    Record { id: String, msg: String },

    /// A binary artifact (checkpoint) does not match the expected layout.
    #[error("format error: {0}")]
    Format(String),

    /// A binary artifact parsed but its internal bookkeeping disagrees
    /// with its contents (truncation, length mismatch, ...).
    #[error("integrity error: {0}")]
    Integrity(String),

    /// A non-finite value appeared where the math requires finite numbers.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// An API contract was violated by the caller (wrong mode, missing
    /// state, out-of-range index).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
