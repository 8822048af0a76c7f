use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch, expected {expected:?}, got {got:?}")]
    ShapeMismatch { op: &'static str, expected: Vec<usize>, got: Vec<usize> },

    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("backward already ran on this tape; record a new forward pass")]
    BackwardTwice,

    #[error("spectral modes ({modes1}, {modes2}) exceed the cap ({cap1}, {cap2}) of a {height}x{width} grid")]
    ModeCap { modes1: usize, modes2: usize, cap1: usize, cap2: usize, height: usize, width: usize },

    #[error("{pathway}: frame size {height}x{width} is not admissible ({reason}); nearest admissible size is {suggest_h}x{suggest_w}")]
    Inadmissible {
        pathway: &'static str,
        height: usize,
        width: usize,
        reason: String,
        suggest_h: usize,
        suggest_w: usize,
    },

    #[error("parameter `{0}` has no gradient")]
    MissingGrad(String),

    #[error("non-finite loss at batch {batch} of epoch {epoch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("checkpoint: bad magic bytes")]
    BadMagic,

    #[error("checkpoint: unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint: file truncated")]
    Truncated,

    #[error("checkpoint: CRC mismatch (stored {stored:08x}, computed {computed:08x})")]
    Checksum { stored: u32, computed: u32 },

    #[error("checkpoint: config mismatch at `{field}`")]
    ConfigMismatch { field: String },

    #[error("checkpoint: {0}")]
    Corrupt(String),

    #[error("config: {0}")]
    Config(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("image {path}: {msg}")]
    Image { path: PathBuf, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidArgument { op, msg: msg.into() }
    }

    pub(crate) fn shape(op: &'static str, expected: &[usize], got: &[usize]) -> Self {
        Error::ShapeMismatch { op, expected: expected.to_vec(), got: got.to_vec() }
    }
}
