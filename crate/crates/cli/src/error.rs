use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] distiag::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 2 for bad configuration, 3 for rank-deficient data, 4 for divergence.
    pub fn exit_code(&self) -> i32 {
        use distiag::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Core(
                E::Parameter(_) | E::Topology(_) | E::Certificate(_) | E::Dimension(_),
            ) => 2,
            CliError::Core(E::RankDeficient(_)) => 3,
            CliError::Core(E::Divergence { .. }) => 4,
            _ => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
