//! Checkpoint container (little-endian):
//!
//! ```text
//! magic   "MSQP"
//! u16     version (1)
//! u32     metadata length, then that many bytes of UTF-8 JSON
//! u32     tensor count
//! per tensor, in name order:
//!   u16   name length, name bytes (UTF-8)
//!   u8    rank, then rank x u32 dims
//!   f64   values, row-major
//! ```
//!
//! Values are stored as `f64` so a reloaded model reproduces its outputs bit
//! for bit.

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::{ParamSet, Tensor};

pub const CONTAINER_MAGIC: &[u8; 4] = b"MSQP";
pub const CONTAINER_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("bad magic")]
    BadMagic,
    #[error("version mismatch: file has {found}, supported {supported}")]
    VersionMismatch { found: u16, supported: u16 },
    #[error("truncated container")]
    Truncated,
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("malformed container: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn encode_container(metadata: &str, params: &ParamSet) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CONTAINER_MAGIC);
    out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    out.extend_from_slice(&(metadata.len() as u32).to_le_bytes());
    out.extend_from_slice(metadata.as_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ContainerError> {
        let end = self.at.checked_add(n).ok_or(ContainerError::Truncated)?;
        if end > self.bytes.len() {
            return Err(ContainerError::Truncated);
        }
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ContainerError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ContainerError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_container(bytes: &[u8]) -> Result<(String, ParamSet), ContainerError> {
    if bytes.len() < 4 || &bytes[..4] != CONTAINER_MAGIC {
        return Err(ContainerError::BadMagic);
    }
    let mut r = Reader { bytes, at: 4 };
    let version = r.u16()?;
    if version != CONTAINER_VERSION {
        return Err(ContainerError::VersionMismatch {
            found: version,
            supported: CONTAINER_VERSION,
        });
    }
    let meta_len = r.u32()? as usize;
    let metadata = std::str::from_utf8(r.take(meta_len)?)
        .map_err(|e| ContainerError::Malformed(e.to_string()))?
        .to_string();
    let count = r.u32()?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|e| ContainerError::Malformed(e.to_string()))?
            .to_string();
        let rank = r.u8()? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let len: usize = shape.iter().product();
        let raw = r.take(len.checked_mul(8).ok_or(ContainerError::Truncated)?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let tensor = Tensor::new(&shape, data).map_err(|e| ContainerError::Malformed(e.to_string()))?;
        params
            .insert(&name, tensor)
            .map_err(|e| ContainerError::Malformed(e.to_string()))?;
    }
    if r.at != bytes.len() {
        return Err(ContainerError::TrailingBytes(bytes.len() - r.at));
    }
    Ok((metadata, params))
}

pub fn write_container(path: impl AsRef<Path>, metadata: &str, params: &ParamSet) -> Result<(), ContainerError> {
    fs::write(path, encode_container(metadata, params))?;
    Ok(())
}

pub fn read_container(path: impl AsRef<Path>) -> Result<(String, ParamSet), ContainerError> {
    decode_container(&fs::read(path)?)
}
