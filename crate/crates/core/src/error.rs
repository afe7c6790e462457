use std::path::PathBuf;

use crate::types::Timestamp;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{stream} are not sorted by time: first violation at index {index}")]
    Unsorted { stream: &'static str, index: usize },

    #[error("negative time interval {0} s")]
    NegativeInterval(f64),

    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },

    #[error("CRF table is not monotone at sample {index}")]
    NonMonotoneCrf { index: usize },

    #[error("CRF table must have {expected} samples, got {got}")]
    CrfLength { expected: usize, got: usize },

    #[error("query at {query} precedes the committed state at {committed} (pixel {x}, {y})")]
    RetroQuery {
        query: Timestamp,
        committed: Timestamp,
        x: usize,
        y: usize,
    },

    #[error("time {t} outside window [{start}, {end})")]
    OutsideWindow {
        t: Timestamp,
        start: Timestamp,
        end: Timestamp,
    },

    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("image of {width}x{height} is smaller than the {window}x{window} window")]
    ImageTooSmall {
        width: usize,
        height: usize,
        window: usize,
    },

    #[error("no qualifying pixels for contrast threshold estimate")]
    NoQualifyingPixels,

    #[error("no frame at or before {0}")]
    NoFrame(Timestamp),

    #[error("geometry mismatch: {0}")]
    Geometry(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
