use std::path::Path;

use costenv_core::engine::EngineError;

/// Process exit codes.
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_PROTOCOL: i32 = 3;
pub const EXIT_INVARIANT: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => EXIT_CONFIG,
            HarnessError::Protocol(_) => EXIT_PROTOCOL,
            HarnessError::Invariant(_) => EXIT_INVARIANT,
            HarnessError::Io { .. } | HarnessError::Format { .. } => EXIT_IO,
        }
    }
}

impl From<EngineError> for HarnessError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Config(_) | EngineError::Cost(_) | EngineError::Block(_) => {
                HarnessError::Config(e.to_string())
            }
            EngineError::NotRunning | EngineError::TurnLimit => {
                HarnessError::Protocol(e.to_string())
            }
            EngineError::Invariant(_) => HarnessError::Invariant(e.to_string()),
        }
    }
}
