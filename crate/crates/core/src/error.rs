use std::path::PathBuf;

use thiserror::Error;

use crate::autodiff::AutodiffError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("case has no paragraphs")]
    EmptyCase,

    #[error("{got} paragraphs exceed the positional table of {max}")]
    TooManyParagraphs { got: usize, max: usize },

    #[error("mask length {got} does not match {expected} paragraphs")]
    MaskLength { got: usize, expected: usize },

    #[error("{path}, line {line}: {message}")]
    Corpus { path: PathBuf, line: usize, message: String },

    #[error("unknown article labels: {0:?}")]
    UnknownLabels(Vec<String>),

    #[error("synthetic vocabulary: {0}")]
    Synthetic(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("loss component `{0}` is required by a nonzero weight but was not computed")]
    MissingComponent(&'static str),

    #[error("non-finite {what} (case {case_id})")]
    NonFiniteLoss { what: String, case_id: String },

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("{0}")]
    Invalid(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by inputs (configs, corpora, files) rather
    /// than by a defect in this crate.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::EmptyCase
                | Error::TooManyParagraphs { .. }
                | Error::Corpus { .. }
                | Error::UnknownLabels(_)
                | Error::Synthetic(_)
                | Error::Checkpoint(_)
                | Error::Invalid(_)
                | Error::Io { .. }
        )
    }
}
