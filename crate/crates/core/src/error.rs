use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),

    #[error("invalid grouping: group size {g} does not divide {d}")]
    InvalidGrouping { d: usize, g: usize },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("negative second moment at channel {0}")]
    NegativeMoment(usize),

    #[error("exhaustive search limited to d <= {max}, got {d}")]
    SearchTooLarge { d: usize, max: usize },

    #[error("bad magic")]
    BadMagic,

    #[error("truncated payload")]
    TruncatedPayload,

    #[error("unsupported tensor header: {0}")]
    BadHeader(String),

    #[error("dimension overflow")]
    DimOverflow,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("report: {0}")]
    Report(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
