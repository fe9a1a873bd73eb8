use std::io;

use crate::model::DataItem;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("item {0} is not among the current items")]
    ItemAbsent(DataItem),

    #[error("rank {k} cannot be answered with {n} nodes")]
    RankOutOfRange { k: usize, n: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("scenario line {line}: {msg}")]
    Scenario { line: usize, msg: String },

    #[error("constants file: {0}")]
    Constants(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
