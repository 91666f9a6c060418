use std::path::PathBuf;

use ficm_numerics::NumericsError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("{0}")]
    InvalidInput(String),
    #[error("environment must be reset before stepping")]
    TerminalStep,
    #[error("wrong curiosity kind: {0}")]
    WrongKind(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint {path}: {detail}")]
    Checkpoint { path: PathBuf, detail: String },
    #[error("image {path}: {detail}")]
    Image { path: PathBuf, detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config_err<T>(detail: impl Into<String>) -> Result<T> {
    Err(Error::Config(detail.into()))
}

pub(crate) fn shape_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(Error::Shape {
        op,
        detail: detail.into(),
    })
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
