use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("non-finite value at {0}")]
    NonFinite(String),
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),
    #[error("domain violation: {0}")]
    Domain(String),
    #[error("infeasible marginals: row mass {row} vs column mass {col}")]
    InfeasibleMarginals { row: f64, col: f64 },
    #[error("exact transport limited to n*p <= {limit} cells, got {cells}; use Sinkhorn explicitly")]
    SizeGuard { cells: usize, limit: usize },
    #[error("zero mass in row {0}")]
    ZeroRowMass(usize),
    #[error("every atom has weight below the pruning threshold {0}")]
    EmptyMeasure(f64),
    #[error("{solver} did not converge within {iterations} iterations (residual {residual:e})")]
    NotConverged {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{0}: no rows")]
    NoRows(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
