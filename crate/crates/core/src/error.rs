use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// The sampled covariance must be invertible and the sampled
    /// correlation matrix full rank.
    #[error("rank deficiency: {0}")]
    RankDeficient(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("topology error: {0}")]
    Topology(String),

    #[error("diverged at iteration {iter}: {detail}")]
    Divergence { iter: u64, detail: String },

    #[error("certificate not applicable: {0}")]
    Certificate(String),

    #[error("serialization: {0}")]
    Serialization(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
