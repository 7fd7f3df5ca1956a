use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Failures of the std-side tooling, each mapped onto a process exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] cotmisr_core::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("{}: {msg}", path.display())]
    Data { path: PathBuf, msg: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}")]
    Other(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn data(path: impl AsRef<Path>, msg: impl Into<String>) -> Self {
        Error::Data { path: path.as_ref().to_path_buf(), msg: msg.into() }
    }

    pub fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        Error::Io { path: path.as_ref().to_path_buf(), source }
    }

    /// 2 for configuration problems, 3 for unusable data, 4 for numerical
    /// blow-ups and 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        use cotmisr_core::Error as C;
        match self {
            Error::Config(_) | Error::Core(C::Config(_) | C::Architecture { .. }) => 2,
            Error::Data { .. } | Error::Core(C::EmptyMask(_)) => 3,
            Error::Core(C::NonFinite(_)) => 4,
            _ => 1,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Other(format!("csv: {e}"))
    }
}
