//! Shared error type for the whole library.
//!
//! Variants are grouped by what went wrong rather than where: callers (the
//! CLI in particular) map them onto exit codes, so the distinction that
//! matters is config/argument vs. data vs. numeric trouble.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A file did not match the expected column layout.
    #[error("schema error: {0}")]
    Schema(String),

    /// A cell failed to parse; `row` is 1-based and counts the header.
    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    /// The same record id appeared twice in one input.
    #[error("duplicate record id `{0}`")]
    DuplicateId(String),

    /// A function argument was out of range or inconsistent.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// More items were requested than the input can supply.
    #[error("requested {requested} {what} but only {available} are available")]
    Capacity {
        what: String,
        requested: usize,
        available: usize,
    },

    /// An id was referenced that no table knows about.
    #[error("unknown entity `{0}`")]
    Lookup(String),

    /// Two vectors that must agree in length did not.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: String,
        expected: usize,
        actual: usize,
    },

    /// Negative sampling ran out of legal candidates.
    #[error("no corruption candidate left: {0}")]
    Exhausted(String),

    /// A non-finite value surfaced where a finite one is required.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
