use std::path::{Path, PathBuf};

use muonlab_core::Error as CoreError;

pub type Result<T, E = LabError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("{0}")]
    Usage(String),
    #[error("config error in {path}: {message}")]
    Config { path: String, message: String },
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{0}")]
    Contract(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error in {path} at byte offset {offset}: {message}")]
    Format {
        path: String,
        offset: u64,
        message: String,
    },
    #[error("refusing to overwrite existing {0}")]
    Exists(PathBuf),
}

impl LabError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        LabError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn config(path: impl AsRef<Path>, message: impl Into<String>) -> Self {
        LabError::Config {
            path: path.as_ref().display().to_string(),
            message: message.into(),
        }
    }

    /// 0 success, 1 usage or configuration, 2 numeric or contract failure,
    /// 3 filesystem or file format.
    pub fn exit_code(&self) -> u8 {
        match self {
            LabError::Usage(_) | LabError::Config { .. } => 1,
            LabError::Core(CoreError::Config(_) | CoreError::Registry(_)) => 1,
            LabError::Core(_) | LabError::Contract(_) => 2,
            LabError::Io { .. } | LabError::Format { .. } | LabError::Exists(_) => 3,
        }
    }
}
