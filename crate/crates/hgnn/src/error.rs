use std::path::{Path, PathBuf};

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Stream(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] hgnn_core::Error),
    /// A structured text file that does not follow its format.
    #[error("{what} line {line}: {message}")]
    Format {
        what: &'static str,
        line: usize,
        message: String,
    },
    #[error("{0}")]
    Usage(String),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            what,
            line,
            message: message.into(),
        }
    }
}
