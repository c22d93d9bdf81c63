use thiserror::Error;

/// Errors shared by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid marginal: {0}")]
    InvalidMarginal(String),

    /// Linear-domain Sinkhorn scaling produced an identically zero row or
    /// column; the caller should retry with `log_domain` set.
    #[error("numerical underflow: {0}")]
    NumericalUnderflow(String),

    #[error("instance too large: {0}")]
    TooLarge(String),

    #[error("training diverged (non-finite loss) at clustering round {round}")]
    TrainingDiverged { round: usize },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
