//! Skeletal pose sequences, body-part decomposition, a procedural labeled
//! motion generator, and the binary motion file format.

mod io;
mod sequence;
mod skeleton;
mod synth;

use thiserror::Error;

pub use io::{decode_motion, encode_motion, read_motion, write_motion, MOTION_MAGIC, MOTION_VERSION};
pub use sequence::{check_nested, decompose, reassemble, rotate_heading, MotionSequence, PartFeature, DEFAULT_FPS};
pub use skeleton::{PartGroup, PartSet, Skeleton, FEATURE_DIM, JOINT_COUNT, ROOT_FEATURES};
pub use synth::{
    pelvis_displacement, synth_edit_pair, synth_generate, EditLabel, EditPair, LabeledMotion, MotionClass, MIN_FRAMES,
};

use crate::numerics::NumericsError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MotionError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("motion contains non-finite values")]
    NonFinite,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unknown motion class `{0}`")]
    UnknownClass(String),
    #[error("unknown edit label `{0}`")]
    UnknownEdit(String),
    #[error("sequence of {frames} frames is shorter than the minimum {min}")]
    TooShort { frames: usize, min: usize },
}

impl From<NumericsError> for MotionError {
    fn from(e: NumericsError) -> Self {
        MotionError::Shape(e.to_string())
    }
}

#[derive(Debug, Error)]
pub enum MotionFileError {
    #[error("bad magic")]
    BadMagic,
    #[error("version mismatch: file has {found}, supported {supported}")]
    VersionMismatch { found: u16, supported: u16 },
    #[error("truncated: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("invalid payload: {0}")]
    InvalidPayload(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl MotionFileError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            MotionFileError::BadMagic => "bad-magic",
            MotionFileError::VersionMismatch { .. } => "version-mismatch",
            MotionFileError::Truncated { .. } => "truncated",
            MotionFileError::TrailingBytes(_) => "trailing-bytes",
            MotionFileError::InvalidHeader(_) => "invalid-header",
            MotionFileError::InvalidPayload(_) => "invalid-payload",
            MotionFileError::Io(_) => "io",
        }
    }
}
