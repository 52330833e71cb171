use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: adaptrunc::Error },
    #[error(transparent)]
    Core(#[from] adaptrunc::Error),
}

impl CliError {
    /// 2 for configuration problems, 4 for unreadable or malformed input
    /// and unwritable output, 1 for failures inside the sampler.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) | Self::Core(adaptrunc::Error::Config(_)) => 2,
            Self::Read { source: adaptrunc::Error::Config(_), .. } => 2,
            Self::Io(_) | Self::Read { .. } | Self::Core(adaptrunc::Error::Io(_)) | Self::Core(adaptrunc::Error::Data(_)) => 4,
            Self::Core(_) => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
