use std::path::PathBuf;

/// Errors surfaced by the tool, split by exit code.
#[derive(Debug, thiserror::Error)]
pub enum ForgeError {
    /// Bad input from the user: flags, configs, malformed files.
    #[error("{0}")]
    Validation(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Core(#[from] cadence_core::Error),
}

impl ForgeError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    /// 1 for validation problems, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation(_) => 1,
            Self::Core(cadence_core::Error::Validation(_) | cadence_core::Error::Shape(_)) => 1,
            Self::Io { .. } | Self::Runtime(_) | Self::Core(_) => 2,
        }
    }
}

impl From<serde_json::Error> for ForgeError {
    fn from(e: serde_json::Error) -> Self {
        Self::Validation(format!("json: {e}"))
    }
}

impl From<csv::Error> for ForgeError {
    fn from(e: csv::Error) -> Self {
        Self::Validation(format!("csv: {e}"))
    }
}

pub type Result<T> = std::result::Result<T, ForgeError>;

macro_rules! invalid {
    ($($arg:tt)*) => {
        return Err($crate::error::ForgeError::Validation(format!($($arg)*)))
    };
}
pub(crate) use invalid;
