use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left} vs {right}")]
    Shape {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("batch norm in train mode needs a batch of at least 2, got {0}")]
    BatchTooSmall(usize),

    #[error("unknown layer `{0}`")]
    UnknownLayer(String),

    #[error("channel {channel} out of range for layer `{layer}` ({channels} channels)")]
    UnknownChannel {
        layer: String,
        channel: usize,
        channels: usize,
    },

    #[error("incompatible input dims: {0}")]
    IncompatibleDims(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("bad checkpoint magic {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("checkpoint truncated: {0}")]
    Truncated(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("malformed image {path}: {reason}")]
    Image { path: PathBuf, reason: String },

    #[error("unsupported PPM maxval {0} (only 255 is supported)")]
    UnsupportedMaxval(u32),

    #[error("dataset: {0}")]
    Data(String),

    #[error("zero variance in channel {0}")]
    ZeroVariance(usize),

    #[error("receptive field does not intersect the image")]
    EmptyPatch,

    #[error("neuron ({i}, {j}) outside feature map {h}x{w}")]
    NeuronOutOfBounds { i: usize, j: usize, h: usize, w: usize },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: impl ToString, right: impl ToString) -> Self {
        Error::Shape {
            op,
            left: left.to_string(),
            right: right.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
