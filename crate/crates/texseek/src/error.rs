use std::path::PathBuf;
use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("pnm parse error at byte {offset}: {msg}")]
    PnmParse { offset: usize, msg: String },

    #[error("image dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),

    #[error("inconsistent block grid geometry: {0}")]
    BadGeometry(String),

    #[error("quantization table entries must be >= 1")]
    BadQuantTable,

    #[error("payload needs {needed} bits but image capacity is {capacity}")]
    Capacity { needed: usize, capacity: usize },

    #[error("unembeddable block at index {0}")]
    Unembeddable(usize),

    #[error("payload frame is {0} bytes, limit is 65535")]
    FrameTooLarge(usize),

    #[error("invalid attribute {0:?}: {1}")]
    BadAttribute(String, String),

    #[error("not a stego payload")]
    NotStego,

    #[error("corrupted payload")]
    CorruptPayload,

    #[error("short read")]
    ShortRead,

    #[error("feature dimensionality mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),

    #[error("image {width}x{height} too small for the filter bank (needs {min}x{min})")]
    ImageTooSmall { width: u32, height: u32, min: u32 },

    #[error("invalid bank config: {0}")]
    BadBankConfig(String),

    #[error("invalid config: {0}")]
    BadConfig(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("empty corpus: no readable images under {0}")]
    EmptyCorpus(PathBuf),

    #[error("no embedded attributes: {0}")]
    NoEmbeddedAttributes(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("config mismatch")]
    ConfigMismatch,

    #[error("all providers unreachable: {0}")]
    AllProvidersFailed(String),

    #[error("relevant set is empty")]
    EmptyRelevantSet,

    #[error("invalid corpus parameters: {0}")]
    BadCorpusParams(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
