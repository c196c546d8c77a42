use std::path::PathBuf;

use chrono::NaiveDate;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed caller-supplied value (address, hash, parameter).
    #[error("invalid input: {0}")]
    Input(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Data that violates a structural invariant (missing block index, ...).
    #[error("data error: {0}")]
    Data(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("no price entry for {0}")]
    MissingPrice(NaiveDate),

    #[error("undefined ratio: |coefficient of {0}| is below 1e-12")]
    UndefinedRatio(String),

    #[error("rank-deficient design; collinear columns: {}", .0.join(", "))]
    RankDeficient(Vec<String>),

    #[error("inference failed: {0}")]
    Inference(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
