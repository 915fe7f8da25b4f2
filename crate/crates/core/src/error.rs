use std::io;

use thiserror::Error;

use crate::stream::ProtocolError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Every pressure channel read zero, so the centre of pressure is undefined.
    #[error("no load on any pressure channel")]
    NoLoad,

    #[error("training set is missing class {0}")]
    MissingClass(crate::Label),

    #[error("non-finite feature {feature} in sample {sample}")]
    NonFinite { sample: usize, feature: usize },

    #[error("malformed model file: {0}")]
    ModelFormat(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Protocol(#[from] ProtocolError),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// Wraps the error with the name of the pipeline stage that raised it.
    pub fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage { stage, source: Box::new(self) }
    }
}
