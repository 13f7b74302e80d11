use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("config {}: {message}", path.display())]
    Config { path: PathBuf, message: String },

    /// An input a stage needs is not on disk.
    #[error("missing input {}: {hint}", path.display())]
    MissingInput { path: PathBuf, hint: String },

    #[error(transparent)]
    Data(#[from] landmark_core::Error),
}

impl CliError {
    /// 2 for usage and config problems, 1 for data problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config { .. } => 2,
            CliError::MissingInput { .. } | CliError::Data(_) => 1,
        }
    }
}
