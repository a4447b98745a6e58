use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("regularity failure: {0}")]
    Regularity(String),

    #[error("trajectory diverged at t = {time} ({detail})")]
    Divergence { time: f64, detail: String },

    #[error("domain truncation too small: {0}")]
    Truncation(String),

    #[error(
        "centering condition violated: integral of b against the invariant measure is {mean:e}"
    )]
    Centering { mean: f64 },

    #[error("degenerate coefficient: {0}")]
    Degenerate(String),

    #[error("ill-conditioned operator: estimated condition number {cond:e}")]
    IllConditioned { cond: f64 },

    #[error("inadmissible path: {0}")]
    Inadmissible(String),

    #[error("experiment failed: {0}")]
    Experiment(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for failures of the numerics rather than of the caller's input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Regularity(_)
                | Error::Divergence { .. }
                | Error::Truncation(_)
                | Error::Degenerate(_)
                | Error::IllConditioned { .. }
                | Error::Inadmissible(_)
                | Error::Experiment(_)
                | Error::Internal(_)
        )
    }
}
