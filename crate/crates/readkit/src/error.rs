use std::io;
use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error in {path}: {detail}")]
    Data { path: PathBuf, detail: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("checkpoint {path}: {detail}")]
    Checkpoint { path: PathBuf, detail: String },
    #[error(transparent)]
    Core(#[from] readkit_core::Error),
}

impl Error {
    pub fn io(path: &Path) -> impl FnOnce(io::Error) -> Error + '_ {
        move |source| Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn data(path: &Path, detail: impl std::fmt::Display) -> Error {
        Error::Data {
            path: path.to_path_buf(),
            detail: detail.to_string(),
        }
    }

    /// Process exit code: 2 configuration, 3 data, 4 numeric abort.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Core(readkit_core::Error::Config(_)) => 2,
            Error::Core(readkit_core::Error::NonFinite { .. }) => 4,
            _ => 3,
        }
    }
}
