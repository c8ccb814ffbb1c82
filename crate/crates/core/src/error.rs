use thiserror::Error;

pub type Result<T, E = FsnnError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum FsnnError {
    /// A solver stage produced a non-finite value.
    #[error("integration failure: state {state} became non-finite at t = {time}")]
    Integration { state: usize, time: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("model evaluation error: {0}")]
    Evaluation(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl FsnnError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        FsnnError::Config(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        FsnnError::Input(msg.into())
    }
}
