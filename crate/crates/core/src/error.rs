use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("corrupt tensor file {path}: {reason}")]
    Corruption { path: PathBuf, reason: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("encoder gateway error: {0}")]
    Gateway(String),

    #[error("exchange timed out after {seconds} s waiting for {marker}")]
    ExchangeTimeout { seconds: f64, marker: PathBuf },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("invalid attacker spec: {0}")]
    Spec(String),

    #[error("training setup error: {0}")]
    TrainingSetup(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("config error at `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("image decode error for {path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad user input rather than the environment.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation(_)
                | Error::Config { .. }
                | Error::Spec(_)
                | Error::Parameter(_)
                | Error::Split(_)
                | Error::Dimension(_)
        )
    }
}
