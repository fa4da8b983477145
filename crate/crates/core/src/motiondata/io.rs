//! Motion file format (little-endian):
//!
//! ```text
//! magic  "MSQM"
//! u16    version (1)
//! u32    N frames
//! u16    J joints
//! u16    D features (must equal 4 + 3 (J - 1))
//! f32    fps
//! f32    N * D values, row-major
//! ```

use std::fs;
use std::path::Path;

use crate::numerics::Tensor;

use super::sequence::MotionSequence;
use super::skeleton::{FEATURE_DIM, JOINT_COUNT};
use super::MotionFileError;

pub const MOTION_MAGIC: &[u8; 4] = b"MSQM";
pub const MOTION_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 + 2 + 2 + 4;

pub fn encode_motion(x: &MotionSequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * x.frames().len());
    out.extend_from_slice(MOTION_MAGIC);
    out.extend_from_slice(&MOTION_VERSION.to_le_bytes());
    out.extend_from_slice(&(x.len() as u32).to_le_bytes());
    out.extend_from_slice(&(x.joint_count() as u16).to_le_bytes());
    out.extend_from_slice(&(x.feature_dim() as u16).to_le_bytes());
    out.extend_from_slice(&(x.fps() as f32).to_le_bytes());
    for &v in x.frames().data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

fn u16_at(bytes: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([bytes[at], bytes[at + 1]])
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

pub fn decode_motion(bytes: &[u8]) -> Result<MotionSequence, MotionFileError> {
    if bytes.len() < 4 || &bytes[..4] != MOTION_MAGIC {
        return Err(MotionFileError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(MotionFileError::Truncated {
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let version = u16_at(bytes, 4);
    if version != MOTION_VERSION {
        return Err(MotionFileError::VersionMismatch {
            found: version,
            supported: MOTION_VERSION,
        });
    }
    let frames = u32_at(bytes, 6) as usize;
    let joints = u16_at(bytes, 10) as usize;
    let dim = u16_at(bytes, 12) as usize;
    let fps = f32::from_le_bytes(bytes[14..18].try_into().expect("4 bytes"));
    if frames == 0 {
        return Err(MotionFileError::InvalidHeader("zero frames".into()));
    }
    if joints != JOINT_COUNT || dim != FEATURE_DIM {
        return Err(MotionFileError::InvalidHeader(format!(
            "unsupported skeleton J={joints}, D={dim} (expected J={JOINT_COUNT}, D={FEATURE_DIM})"
        )));
    }
    if !(fps.is_finite() && fps > 0.0) {
        return Err(MotionFileError::InvalidHeader(format!("fps {fps}")));
    }
    let expected = HEADER_LEN + 4 * frames * dim;
    if bytes.len() < expected {
        return Err(MotionFileError::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(MotionFileError::TrailingBytes(bytes.len() - expected));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    let tensor = Tensor::new(&[frames, dim], data).map_err(|e| MotionFileError::InvalidHeader(e.to_string()))?;
    MotionSequence::new(tensor, fps as f64).map_err(|e| MotionFileError::InvalidPayload(e.to_string()))
}

pub fn write_motion(path: impl AsRef<Path>, x: &MotionSequence) -> Result<(), MotionFileError> {
    fs::write(path, encode_motion(x))?;
    Ok(())
}

pub fn read_motion(path: impl AsRef<Path>) -> Result<MotionSequence, MotionFileError> {
    decode_motion(&fs::read(path)?)
}
