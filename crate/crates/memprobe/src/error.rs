use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { found: Vec<u8>, expected: &'static [u8] },

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("overlapping tensor ranges: `{0}` and `{1}`")]
    Overlap(String, String),

    #[error("tensor `{name}` has unknown dtype `{dtype}`")]
    UnknownDtype { name: String, dtype: String },

    #[error("malformed header: {0}")]
    BadHeader(String),

    #[error("invalid tensor name `{0}`")]
    BadTensorName(String),

    #[error("duplicate tensor `{0}`")]
    DuplicateTensor(String),

    #[error("tensor `{name}`: expected shape {expected:?}, got {actual:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("tensor `{0}` not found")]
    NoSuchTensor(String),

    #[error("tensor `{0}` contains non-finite values")]
    NonFinite(String),

    #[error("{}: line {line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Core(#[from] memprobe_core::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
