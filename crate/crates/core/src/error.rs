use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("non-finite value encountered at iteration {iter}")]
    Numeric { iter: usize },

    #[error("design error: {0}")]
    Design(String),

    #[error("infeasible problem: {0}")]
    Infeasible(String),

    #[error("no convergence: {0}")]
    Convergence(String),

    /// No admissible precision exists at the lowest certified cost level.
    /// `margin` is the smallest value of `R - threshold` seen during the scan
    /// (positive means the decrease condition was never met).
    #[error("certification infeasible at q_min = {q_min}: closest margin {margin:e}")]
    CertificationInfeasible { q_min: f64, margin: f64 },

    #[error("precondition failed: {0}")]
    Precondition(String),
}

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension {
            what,
            expected,
            got,
        });
    }
    Ok(())
}
