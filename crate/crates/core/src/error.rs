use std::fmt;
use std::path::PathBuf;

/// Errors raised across the library.
#[derive(Debug)]
pub enum Error {
    /// Operand shapes are incompatible.
    Dimension(String),
    /// An index (label, class, node) is out of range.
    Index(String),
    /// A caller broke an operation precondition.
    Contract(String),
    /// Invalid configuration value.
    Config(String),
    /// A scaled architecture has fewer maskable weights than its base.
    Capacity(String),
    /// Malformed binary input.
    Format { offset: u64, message: String },
    /// Filesystem failure, with the offending path.
    Io { path: PathBuf, source: std::io::Error },
    /// Non-finite values appeared during training.
    Divergence(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }

    /// True for errors a CLI should report as configuration problems.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Capacity(_) | Error::Contract(_) | Error::Dimension(_)
        )
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension(m) => write!(f, "dimension error: {m}"),
            Error::Index(m) => write!(f, "index error: {m}"),
            Error::Contract(m) => write!(f, "contract error: {m}"),
            Error::Config(m) => write!(f, "config error: {m}"),
            Error::Capacity(m) => write!(f, "capacity error: {m}"),
            Error::Format { offset, message } => {
                write!(f, "format error at byte {offset}: {message}")
            }
            Error::Io { path, source } => write!(f, "{}: {source}", path.display()),
            Error::Divergence(m) => write!(f, "divergence: {m}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}
