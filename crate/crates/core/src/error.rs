use thiserror::Error;

use crate::conllu::ConlluError;
use crate::tensor::TensorError;
use crate::vocab::VocabError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error(transparent)]
    Conllu(#[from] ConlluError),

    #[error(transparent)]
    Vocab(#[from] VocabError),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0}")]
    Decode(String),

    #[error("{0}")]
    Eval(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("empty corpus: {0}")]
    EmptyCorpus(&'static str),

    #[error("swa_finalize called before any swa_update")]
    SwaEmpty,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
