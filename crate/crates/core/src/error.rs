use thiserror::Error;

use crate::domain::Field;

/// Crate-wide error type.
///
/// The CLI maps these onto exit codes: configuration and validation problems
/// exit 1, failed scenario or suite assertions exit 2, and numerical failures
/// (non-convergence, divergence) exit 3.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside an operation's mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Config text that does not parse.
    #[error("config parse error at line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    /// Config that parses but violates a documented invariant.
    #[error("config validation error: {0}")]
    ConfigValidation(String),

    /// Requested grid exceeds the point budget.
    #[error("memory budget exceeded: grid has {requested} points, budget is {budget}")]
    MemoryBudget { requested: u128, budget: u64 },

    /// Two fields that must share a grid do not.
    #[error("grid mismatch: fields live on different grids")]
    GridMismatch,

    /// Iterative solve stopped above tolerance. Carries the best iterate and
    /// the residual history so callers can inspect or retry.
    #[error("solver did not converge: residual {residual:.3e} after {iterations} iterations")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
        best: Box<Field>,
    },

    /// A trajectory norm blew past the divergence guard or became non-finite.
    #[error("numerical divergence at t = {t}: {message}")]
    Divergence { t: f64, message: String },

    /// A fit or detector was handed too few records.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Snapshot or report file with invalid contents.
    #[error("malformed file {path}: {message}")]
    MalformedFile { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::ConfigValidation(msg.into())
    }
}
