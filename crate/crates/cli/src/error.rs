use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {message}")]
    ConfigParse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: unsupported checkpoint format version {version}")]
    UnsupportedVersion { path: PathBuf, version: u64 },
    #[error("{path}: corrupt checkpoint: {reason}")]
    CorruptFile { path: PathBuf, reason: String },
    #[error(transparent)]
    Core(#[from] pclab_core::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 for configuration problems, 3 for everything that fails at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::ConfigParse { .. } | Self::ConfigInvalid(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
