//! CLI errors and their exit codes.

use std::path::PathBuf;

use shapvec::Error as CoreError;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, bad config, or a resumed run whose upstream artifacts were
    /// produced under a different configuration. Exit code 2.
    Config(String),
    /// An upstream artifact the command needs is absent. Exit code 3.
    Missing { stage: String, path: PathBuf, hint: String },
    /// A report was requested before the run finished. Exit code 3.
    Incomplete(Vec<String>),
    /// Training diverged or a decomposition failed. Exit code 4.
    Numerical(String),
    /// Anything else (I/O, malformed artifacts). Exit code 1.
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Missing { .. } | CliError::Incomplete(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Other(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Missing { stage, path, hint } => write!(
                f,
                "missing artifact: {} (produced by `{stage}`; {hint})",
                path.display()
            ),
            CliError::Incomplete(stages) => {
                write!(f, "run is incomplete; missing stages: {}", stages.join(", "))
            }
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Other(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Numerical(_) | CoreError::Diverged { .. } => CliError::Numerical(e.to_string()),
            CoreError::InvalidSpec(_)
            | CoreError::MissingColumn(_)
            | CoreError::NonNumeric { .. }
            | CoreError::EmptyAfterFiltering
            | CoreError::Idx { .. } => CliError::Config(e.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Other(e.to_string())
    }
}
