use std::path::PathBuf;

/// Errors raised across the harness. `is_config` separates caller mistakes
/// (bad keys, shapes, parameters) from failures while running.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("unknown model `{name}`; valid keys: {valid}")]
    UnknownModel { name: String, valid: String },
    #[error("input {h}x{w} is not a multiple of {multiple} required by {model}")]
    InputSize {
        model: String,
        h: usize,
        w: usize,
        multiple: usize,
    },
    #[error("ingestion failed for {path}: {reason}")]
    Ingest { path: PathBuf, reason: String },
    #[error("sample `{id}`: {reason}")]
    Sample { id: String, reason: String },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] mammoseg_nn::ArchiveError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("image: {0}")]
    Image(#[from] image::ImageError),
    #[error("plot: {0}")]
    Plot(String),
}

impl Error {
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Invalid(_) | Error::UnknownModel { .. } | Error::InputSize { .. }
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
