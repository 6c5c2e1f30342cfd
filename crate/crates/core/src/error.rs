use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// An operation that requires a proper function received an improper one.
    #[error("improper function: {0}")]
    Improper(String),

    /// A function representation violated a PLQ invariant.
    #[error("invalid plq function: {0}")]
    InvalidPlq(String),

    /// Scenario-tree structural invariant violated.
    #[error("invalid tree: {0}")]
    InvalidTree(String),

    /// Shapes of processes, measures or integrands do not line up.
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    /// An exhaustive enumeration was requested above the size cap.
    #[error("enumeration cap exceeded: {0}")]
    CapExceeded(String),

    /// A scalar parameter was outside its admissible range.
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    /// Line-oriented parse failure; `line` is 1-based.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Solver-level failure (improper objective, inconsistent problem data).
    #[error("solver: {0}")]
    Solver(String),

    /// Minimization of a function that is unbounded below.
    #[error("function is unbounded below")]
    Unbounded,
}

pub type Result<T> = std::result::Result<T, Error>;
