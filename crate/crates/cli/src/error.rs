use abp_core::AbpError;
use serde::Serialize;
use std::fmt;

/// Failure classes, each with its own exit status.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", content = "message", rename_all = "kebab-case")]
pub enum CliError {
    Config(String),
    Blowup(String),
    Acceptance(String),
    Io(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Blowup(_) => 3,
            CliError::Acceptance(_) => 4,
            CliError::Io(_) | CliError::Numerical(_) => 1,
        }
    }

    /// One-line JSON failure record.
    pub fn record(&self) -> String {
        serde_json::json!({ "status": "error", "exit_code": self.exit_code(), "error": self }).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Blowup(m) => write!(f, "numerical blowup: {m}"),
            CliError::Acceptance(m) => write!(f, "acceptance failure: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<AbpError> for CliError {
    fn from(e: AbpError) -> Self {
        match e {
            AbpError::Blowup { .. } => CliError::Blowup(e.to_string()),
            AbpError::Invalid { .. } | AbpError::Dimension { .. } | AbpError::Unsupported(_) | AbpError::Disabled(_) => {
                CliError::Config(e.to_string())
            }
            AbpError::NonPositive { .. } | AbpError::Consistency(_) => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
