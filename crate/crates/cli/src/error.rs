use std::path::Path;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] diffrx_core::Error),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    /// Output already present and `--force` not given.
    #[error("{0}")]
    Exists(String),
    #[error("{0}")]
    Missing(String),
    #[error("{0}")]
    Parse(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Stable machine-readable class printed as `error[<class>]`.
    pub fn class(&self) -> &'static str {
        match self {
            HarnessError::Core(e) => e.class(),
            HarnessError::Config(_) => "config",
            HarnessError::Usage(_) => "usage",
            HarnessError::Exists(_) => "exists",
            HarnessError::Missing(_) => "missing",
            HarnessError::Parse(_) => "parse",
            HarnessError::Io { .. } => "io",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.class() {
            "config" | "usage" | "dimension" => 2,
            "exists" | "missing" => 3,
            "parse" | "format" => 4,
            "io" => 5,
            _ => 1,
        }
    }
}
