use thiserror::Error;

/// Errors raised by the compositing library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("mask is empty")]
    EmptyMask,
    #[error("degenerate augmentation: {0}")]
    DegenerateAugmentation(String),
    #[error("insufficient frames: need at least 2, got {0}")]
    InsufficientFrames(usize),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("timestep {t} out of range for schedule of length {len}")]
    Index { t: usize, len: usize },
    #[error("timestep ordering violated: t_prev ({t_prev}) must be < t ({t})")]
    Ordering { t: usize, t_prev: usize },
    #[error("value out of range: {0}")]
    Range(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("degenerate embedding: {0}")]
    DegenerateEmbedding(String),
    #[error("degenerate label: {0}")]
    DegenerateLabel(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error("checkpoint integrity error: {0}")]
    Integrity(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("png error: {0}")]
    Png(String),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
