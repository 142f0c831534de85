use std::path::Path;

use mrpd_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("I/O error: {0}")]
    Io(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("validation failed: {0}")]
    Invalid(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) | CliError::Invalid(_) => 3,
            CliError::Io(_) | CliError::Format(_) => 4,
        }
    }
}

fn is_numeric(e: &CoreError) -> bool {
    match e {
        CoreError::NonFinite { .. } | CoreError::Degenerate(_) => true,
        CoreError::Coil { source, .. } => is_numeric(source),
        _ => false,
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        if is_numeric(&e) {
            CliError::Numeric(e.to_string())
        } else {
            CliError::Config(e.to_string())
        }
    }
}
