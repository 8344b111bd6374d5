use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
///
/// Variants map onto the CLI exit codes: configuration problems exit with 2,
/// I/O problems with 3 and data/shape problems with 4.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported version {found} (expected {expected})")]
    Version { found: u16, expected: u16 },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    Dimension { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("coreset is not full ({fill}/{capacity})")]
    NotFull { fill: usize, capacity: usize },

    #[error("coreset is empty")]
    EmptyBank,

    #[error("coresets were built with different extractors ({0} vs {1})")]
    MixedExtractor(String, String),

    #[error("collection of {available} vectors is smaller than target {target}")]
    Size { available: usize, target: usize },

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("validation set contains no positive pixels")]
    EmptyValidation,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::MixedExtractor(..) => 2,
            Error::Io { .. } => 3,
            _ => 4,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
