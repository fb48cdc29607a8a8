use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error in {file}: {msg}")]
    Parse { file: PathBuf, msg: String },

    #[error("integrity error in {file} line {line}: {msg}")]
    Integrity {
        file: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("generation failed for class {class}: {msg}")]
    Generation { class: usize, msg: String },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("training diverged at epoch {epoch}: {msg}")]
    Training { epoch: usize, msg: String },

    #[error("fit error: {0}")]
    Fit(String),

    #[error("experiment failed on split {split}: {source}")]
    Experiment {
        split: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
