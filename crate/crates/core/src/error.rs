use thiserror::Error;

/// Errors raised anywhere in the inversion and design stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("conjugate gradient did not converge in {iterations} iterations (relative residual {residual:.3e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        /// Relative residual after every iteration.
        history: Vec<f64>,
    },

    #[error("conjugate gradient breakdown at iteration {iteration}: curvature {curvature:.3e} (operator not positive definite)")]
    Breakdown { iteration: usize, curvature: f64 },

    #[error("zero pivot in banded factorization at row {0}")]
    SingularPivot(usize),

    #[error("degenerate domain: {0}")]
    DegenerateDomain(String),

    #[error("degenerate region: {0}")]
    DegenerateRegion(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("invalid scenario:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        });
    }
    Ok(())
}
