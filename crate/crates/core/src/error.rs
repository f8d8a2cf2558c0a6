use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// `vec(Q)` is not in the range of a singular second-moment matrix.
    #[error("dual infeasible: {0}")]
    InfeasibleDual(String),

    #[error("solver did not converge after {iterations} Newton iterations (gap {gap:e})")]
    NonConverged {
        iterations: usize,
        gap: f64,
        /// Best iterate reached, column-major.
        best: Option<Box<crate::solver::SolveResult>>,
    },

    /// Too many Monte Carlo replicates failed.
    #[error("experiment aborted: {0}")]
    Aborted(String),

    #[error("malformed data at row {row}: {message}")]
    Data { row: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for errors caused by the caller's input rather than numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_) | Error::Data { .. } | Error::Io(_) | Error::Json(_) | Error::Csv(_)
        )
    }
}
