use std::fmt;
use std::path::Path;

use ftn_core::FtnError;

#[derive(Debug)]
pub enum CliError {
    Core(FtnError),
    Io { path: String, source: std::io::Error },
    Format(String),
    Usage(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Core(e) => e.kind(),
            Self::Io { .. } => "IoError",
            Self::Format(_) => "FormatError",
            Self::Usage(_) => "InvalidConfig",
        }
    }

    /// 2 for invalid input, 3 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Core(e) if !e.is_config_error() => 3,
            _ => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Core(e) => write!(f, "{e}"),
            Self::Io { path, source } => write!(f, "{path}: {source}"),
            Self::Format(m) | Self::Usage(m) => f.write_str(m),
        }
    }
}

impl From<FtnError> for CliError {
    fn from(e: FtnError) -> Self {
        Self::Core(e)
    }
}
