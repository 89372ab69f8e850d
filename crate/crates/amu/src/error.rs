use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum AmuError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Malformed feature file: bad magic, unknown version, truncation.
    #[error("format error: {0}")]
    Format(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] amu_core::Error),
}

pub type Result<T> = std::result::Result<T, AmuError>;

impl AmuError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AmuError::Io { path: path.into(), source }
    }
}
