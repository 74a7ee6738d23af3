use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("buffer holds {actual} values, {expected} required for the stated dimensions")]
    BufferLength { expected: usize, actual: usize },

    #[error("value {value} at index {index} is outside [0, 1] or not finite")]
    ValueOutOfRange { index: usize, value: f64 },

    #[error("flow component at index {index} is not finite")]
    NonFiniteFlow { index: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),

    #[error("input {width}x{height} is smaller than the minimum dimension {min}")]
    InputTooSmall {
        width: usize,
        height: usize,
        min: usize,
    },

    #[error("solver state became non-finite at pyramid level {level}")]
    NonFiniteState { level: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("no neighbor frame available around target {target} in a sequence of {len}")]
    NeighborWindowEmpty { target: usize, len: usize },

    #[error("target index {target} out of range for a sequence of {len}")]
    TargetOutOfRange { target: usize, len: usize },

    #[error("every pixel is a hole; nothing to inpaint from")]
    AllHoles,

    #[error("ground-truth mask has no fence pixels")]
    EmptyGroundTruth,

    #[error("evaluation region is empty")]
    EmptyRegion,

    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),

    #[error("no `{prefix}_NNNNN.png` files found in {dir}")]
    MissingFrames { dir: PathBuf, prefix: String },

    #[error("sequence in {dir} is not contiguous from 0: index {missing} is missing")]
    NonContiguousIndices { dir: PathBuf, missing: usize },

    #[error("failed to decode {path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("failed to encode {path}: {reason}")]
    Encode { path: PathBuf, reason: String },

    #[error("bad flow magic {0}")]
    BadMagic(f32),

    #[error("flow file truncated: expected {expected} bytes, found {actual}")]
    TruncatedFile { expected: usize, actual: usize },

    #[error("{path}:{line}: {reason}")]
    Config {
        path: String,
        line: usize,
        reason: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Shorthand for [`Error::InvalidParameter`].
    pub fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub fn ensure_same_dims(expected: (usize, usize), actual: (usize, usize)) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}
