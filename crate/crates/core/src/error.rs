use std::path::PathBuf;

use thiserror::Error;

/// Location of a problem inside an input file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilePos {
    pub file: PathBuf,
    /// 1-based line number, header is line 1.
    pub line: u64,
    pub column: Option<String>,
}

impl std::fmt::Display for FilePos {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.file.display(), self.line)?;
        if let Some(col) = &self.column {
            write!(f, " (column `{col}`)")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("schema error at {pos}: {message}")]
    Schema { pos: FilePos, message: String },
    #[error("parse error at {pos}: {message}")]
    Parse { pos: FilePos, message: String },
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
