//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by kernels, solvers, model compilation and file I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// Operands do not conform (vector lengths, matrix shapes, mask sizes).
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// An objective or constraint callback returned a non-finite value or
    /// failed outright.
    #[error("evaluation error: {0}")]
    Eval(String),

    /// Model source could not be parsed. Line and column are 1-based.
    #[error("parse error at {line}:{col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },

    /// Shape checking of a model failed (conflicting or uninferable shapes).
    #[error("shape error: {0}")]
    Shape(String),

    /// A model parameter has no bound data.
    #[error("unbound parameter: {0}")]
    UnboundParameter(String),

    /// Elementwise function applied outside its domain (log of a
    /// non-positive value, log1p below -1, division by zero).
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed input data (bad file magic, ragged CSV, non-finite entries).
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// An iterative method exhausted its budget without meeting its
    /// stopping contract.
    #[error("no convergence: {0}")]
    NoConvergence(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
