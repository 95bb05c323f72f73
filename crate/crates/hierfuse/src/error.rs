use std::path::PathBuf;

use hierfuse_core::Error as CoreError;

/// Process exit codes. Each failure class gets its own code.
pub mod exit {
    pub const OK: i32 = 0;
    pub const GRADCHECK_FAILED: i32 = 1;
    pub const MISSING_FILE: i32 = 2;
    pub const BAD_CONFIG: i32 = 3;
    pub const BAD_DATA: i32 = 4;
    pub const OUTPUT: i32 = 5;
    pub const RUNTIME: i32 = 6;
    pub const USAGE: i32 = 64;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("cannot write {}: {source}", path.display())]
    Output {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Runtime(String),
    #[error("gradient check failed: {}", .0.join(", "))]
    GradcheckFailed(Vec<String>),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::MissingFile(_) => exit::MISSING_FILE,
            CliError::Config(_) => exit::BAD_CONFIG,
            CliError::Data(_) => exit::BAD_DATA,
            CliError::Output { .. } => exit::OUTPUT,
            CliError::Runtime(_) => exit::RUNTIME,
            CliError::GradcheckFailed(_) => exit::GRADCHECK_FAILED,
        }
    }

    pub(crate) fn config(e: impl std::fmt::Display) -> Self {
        CliError::Config(e.to_string())
    }

    pub(crate) fn data(e: impl std::fmt::Display) -> Self {
        CliError::Data(e.to_string())
    }

    pub(crate) fn runtime(e: impl std::fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }
}

/// Core errors raised while training or evaluating. Config and schema errors
/// keep their class; everything else is a runtime failure.
impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Config(_) => CliError::config(e),
            CoreError::Schema { .. } => CliError::data(e),
            _ => CliError::runtime(e),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
