use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error(transparent)]
    Feed(#[from] crate::feed::FeedError),

    #[error(transparent)]
    Trigger(#[from] crate::trigger::TriggerError),

    #[error(transparent)]
    Train(#[from] crate::vit::TrainError),

    #[error(transparent)]
    Regression(#[from] crate::regression::RegressionError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }
}
