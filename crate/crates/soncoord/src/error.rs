use thiserror::Error;

/// Crate-wide error type.
///
/// Variants split into two families: invalid requests (dimensions, arguments,
/// missing data) and numerical failures (singular systems, non-convergent
/// iterations). The CLI maps the former to exit code 2 and the latter to 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("matrix is singular or ill-conditioned (rcond = {rcond:.3e})")]
    IllConditioned { rcond: f64 },

    #[error("eigenvalue iteration did not converge")]
    EigenNonConvergence,

    #[error("Lyapunov operator is singular (marginal spectrum: some lambda_i + lambda_j = 0)")]
    LyapunovMarginal,

    #[error("Lyapunov solution is not positive definite: system is unstable")]
    LyapunovUnstable,

    #[error("rank-deficient design matrix: {0}")]
    RankDeficient(String),

    #[error("numerical overflow in {0}")]
    Overflow(String),

    #[error("iteration did not converge after {iters} steps: {what}")]
    NonConvergence { what: String, iters: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the computation itself rather than of the request.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::IllConditioned { .. }
                | Error::EigenNonConvergence
                | Error::LyapunovMarginal
                | Error::LyapunovUnstable
                | Error::RankDeficient(_)
                | Error::Overflow(_)
                | Error::NonConvergence { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
