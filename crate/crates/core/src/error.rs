use thiserror::Error;

/// Errors raised by the synchronization library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("incomplete pose graph: missing pair ({0}, {1})")]
    IncompleteGraph(usize, usize),

    #[error("eigensolver failed: {0}")]
    EigenSolver(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("diagnostics unavailable: {0}")]
    DiagnosticsUnavailable(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("unsupported format: {0}")]
    Unsupported(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
