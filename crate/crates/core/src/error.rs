use std::path::PathBuf;

/// Errors raised anywhere in the pipeline.
///
/// The variants line up with the command-line exit codes: `Config` maps to 2,
/// `Io` and `Format` to 3, `Incompatible` to 4.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}

macro_rules! contract {
    ($cond:expr, $($arg:tt)*) => {
        if !$cond {
            return Err($crate::Error::Contract(format!($($arg)*)));
        }
    };
}
pub(crate) use contract;
