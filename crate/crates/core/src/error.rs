use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("parameter `{0}` is already registered")]
    DuplicateParameter(String),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("invalid dataset: {0}")]
    Dataset(String),
    #[error("rank deficient input: achievable rank is {achievable}, requested {requested}")]
    RankDeficient { achievable: usize, requested: usize },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("unknown id `{0}`")]
    UnknownId(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
