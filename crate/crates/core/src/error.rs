use std::path::PathBuf;

use fgan_autodiff::AutodiffError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FganError {
    /// Inconsistent or invalid settings.
    #[error("configuration error: {0}")]
    Config(String),
    /// Dataset content cannot satisfy the request.
    #[error("data error: {0}")]
    Data(String),
    /// Malformed file.
    #[error("format error in {path}: {detail}")]
    Format { path: PathBuf, detail: String },
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("usage error: {0}")]
    Usage(String),
    /// A trained component did not reach its quality floor.
    #[error("quality error: {0}")]
    Quality(String),
    /// A class is too rare under the generator to be sampled within budget.
    #[error("scarcity error: class {class} seen {hits} times in {tries} draws (frequency {frequency:.5})")]
    Scarcity {
        class: usize,
        hits: usize,
        tries: usize,
        frequency: f64,
    },
    /// An input produced by an earlier stage is missing.
    #[error("missing artifact {path}: run `fgan {producer}` first")]
    MissingArtifact { path: PathBuf, producer: &'static str },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, FganError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> FganError {
    let path = path.into();
    move |source| FganError::Io { path, source }
}

pub(crate) fn format_err(path: impl Into<PathBuf>, detail: impl Into<String>) -> FganError {
    FganError::Format {
        path: path.into(),
        detail: detail.into(),
    }
}
