use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] dvf_core::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },

    #[error("evaluation refused: {0}")]
    Refused(String),
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 for configuration problems, 3 for numeric
    /// failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Format { .. } => 2,
            HarnessError::Core(e) => core_exit_code(e),
            _ => 1,
        }
    }
}

pub fn core_exit_code(e: &dvf_core::Error) -> i32 {
    match e {
        e if e.is_numeric() => 3,
        dvf_core::Error::Config(_) | dvf_core::Error::Parse { .. } => 2,
        _ => 1,
    }
}
