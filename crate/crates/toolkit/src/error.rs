use std::path::{Path, PathBuf};

pub type Result<T, E = ToolkitError> = std::result::Result<T, E>;

/// Failure classes of the toolkit. Each class maps to one process exit code.
#[derive(Debug, thiserror::Error)]
pub enum ToolkitError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {reason}")]
    Input { path: PathBuf, reason: String },
    #[error("{0}")]
    Numeric(#[from] das_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl ToolkitError {
    pub fn config(msg: impl Into<String>) -> Self {
        ToolkitError::Config(msg.into())
    }

    pub fn input(path: impl AsRef<Path>, reason: impl Into<String>) -> Self {
        ToolkitError::Input {
            path: path.as_ref().to_path_buf(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        ToolkitError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    /// Process exit code: 2 for configuration, 3 for input files, 4 for
    /// numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            ToolkitError::Config(_) => 2,
            ToolkitError::Input { .. } | ToolkitError::Io { .. } => 3,
            ToolkitError::Numeric(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ToolkitError::Config(_) => "config",
            ToolkitError::Input { .. } | ToolkitError::Io { .. } => "input",
            ToolkitError::Numeric(_) => "numeric",
        }
    }
}

/// Reclassifies a core error raised while validating user settings.
pub fn as_config(e: das_core::Error) -> ToolkitError {
    ToolkitError::Config(e.to_string())
}
