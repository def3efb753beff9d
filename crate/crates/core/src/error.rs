use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("inverse transform left an imaginary residue of {residue:e} (bound {bound:e})")]
    ImaginaryResidue { residue: f64, bound: f64 },

    #[error("degenerate box: {0}")]
    DegenerateBox(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("index {index} out of range 1..={max}")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("zero-magnitude spectrum bin at ({x}, {y}) with lambda = 0")]
    SingularBin { x: usize, y: usize },

    #[error("zero vector has no direction")]
    ZeroVector,

    #[error("need {needed} distinct descriptors, found {found}")]
    InsufficientDistinct { needed: usize, found: usize },

    #[error("cannot keep {requested} of {available} channels")]
    InvalidChannelCount { requested: usize, available: usize },

    #[error("sequence {0}: frame count does not match ground truth")]
    MissingFrames(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("image {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
