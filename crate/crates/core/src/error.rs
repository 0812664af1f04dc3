use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("integrability failure: {0}")]
    Integrability(String),

    #[error("shape classification failed: {0}")]
    Classification(String),

    #[error("sublevel sampling failed: {0}")]
    Sampling(String),

    #[error("normalization infeasible: {0}")]
    InfeasibleNormalization(String),

    #[error("tuning failed: {message} (best rate reached {achieved})")]
    Tuning { message: String, achieved: f64 },

    #[error("no crossing: trajectory ended at V = {final_value} above level {level}")]
    NoCrossing { level: f64, final_value: f64 },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config(e.to_string())
    }
}

pub(crate) fn require(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Precondition(msg()))
    }
}
