use thiserror::Error;

#[derive(Debug, Error)]
pub enum ShmmError {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("observation {value} at index {index} is outside the emission support")]
    Domain { index: usize, value: f64 },

    #[error("observation at index {index} has zero density in every state")]
    ZeroLikelihood { index: usize },

    #[error("chunked model needs K^T = {states} states, above the cap of {cap}")]
    TooLarge { states: u128, cap: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("rank deficiency: {0}")]
    Rank(String),

    #[error("degenerate spectrum: {0}")]
    Degeneracy(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ShmmError>;
