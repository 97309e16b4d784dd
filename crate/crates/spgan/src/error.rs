use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{origin}:{line}: {msg}")]
    Parse {
        origin: String,
        line: usize,
        msg: String,
    },
    #[error("{origin}: corpus contains no examples")]
    EmptyCorpus { origin: String },
    #[error("{origin}: {msg}")]
    Checkpoint { origin: String, msg: String },
    #[error("config {}: {msg}", path.display())]
    Config { path: PathBuf, msg: String },
    #[error(transparent)]
    Core(#[from] spgan_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
