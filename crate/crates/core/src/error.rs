use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic")]
    BadMagic,
    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),
    #[error("payload length mismatch: header declares {expected} bytes, found {actual}")]
    PayloadLengthMismatch { expected: u64, actual: u64 },
    #[error("unsupported element type: expected {expected}, found {found}")]
    UnsupportedElementType { expected: &'static str, found: &'static str },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("N mismatch: masks have {masks} entries, class scores have {cls}")]
    NMismatch { masks: usize, cls: usize },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no outlier pixels recorded")]
    NoOutliers,
    #[error("empty partition: {0}")]
    EmptyPartition(&'static str),
    #[error("no eligible mask for assignment")]
    NoEligibleMask,
    #[error("empty negative mask")]
    EmptyNegativeMask,
    #[error("negative of {neg_h}x{neg_w} does not fit into a {height}x{width} image")]
    NegativeTooLarge { neg_h: usize, neg_w: usize, height: usize, width: usize },
    #[error("donor too small: square side {side} exceeds donor {height}x{width}")]
    DonorTooSmall { side: usize, height: usize, width: usize },
    #[error("pixel logits required for record {0}")]
    PixelLogitsRequired(String),
    #[error("record {record}: {message}")]
    Validation { record: String, message: String },
    #[error("record {record}: {source}")]
    Record {
        record: String,
        #[source]
        source: Box<Error>,
    },
    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("malformed image {path}: {message}")]
    Image { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn in_record(self, record: &str) -> Self {
        match self {
            e @ (Error::Record { .. } | Error::Validation { .. } | Error::PixelLogitsRequired(_)) => e,
            e => Error::Record { record: record.to_string(), source: Box::new(e) },
        }
    }

    /// True for failures of the storage layer rather than of the data.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io { .. } | Error::Json { .. } => true,
            Error::Record { source, .. } => source.is_io(),
            _ => false,
        }
    }
}
