use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input outside its domain: {0}")]
    InputDomain(String),

    #[error("ill-conditioned data: {0}")]
    IllConditioned(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("training diverged at epoch {epoch} (loss = {loss})")]
    Divergence { epoch: usize, loss: f64 },

    #[error("no feasible equilibrium: {0}")]
    Infeasible(String),

    #[error("model produced a non-finite value: {0}")]
    ModelDomain(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::InputDomain(msg.into())
    }
}
