//! Token sequences and the token file format (little-endian):
//!
//! ```text
//! magic  "MSQT"
//! u16    version (1)
//! u16    S
//! S x    (u16 n_s, u32 |C_s|)
//! u32    indices, scale 1 first
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::CodecError;

pub const TOKEN_MAGIC: &[u8; 4] = b"MSQT";
pub const TOKEN_VERSION: u16 = 1;

/// Per-scale token lengths and vocabulary sizes.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenLayout {
    pub lengths: Vec<usize>,
    pub vocab: Vec<usize>,
}

impl TokenLayout {
    pub fn new(lengths: Vec<usize>, vocab: Vec<usize>) -> Result<Self, CodecError> {
        if lengths.is_empty() || lengths.len() != vocab.len() {
            return Err(CodecError::Config(
                "layout needs one length and vocabulary per scale".into(),
            ));
        }
        if vocab.contains(&0) {
            return Err(CodecError::Config("empty vocabulary".into()));
        }
        Ok(Self { lengths, vocab })
    }

    pub fn scale_count(&self) -> usize {
        self.lengths.len()
    }

    pub fn total(&self) -> usize {
        self.lengths.iter().sum()
    }

    /// Flat position of the first token of every scale.
    pub fn offsets(&self) -> Vec<usize> {
        self.lengths
            .iter()
            .scan(0, |acc, &n| {
                let start = *acc;
                *acc += n;
                Some(start)
            })
            .collect()
    }

    /// `(scale, offset)` of a flat position, both 0-based.
    pub fn locate(&self, flat: usize) -> Option<(usize, usize)> {
        let mut rest = flat;
        for (s, &n) in self.lengths.iter().enumerate() {
            if rest < n {
                return Some((s, rest));
            }
            rest -= n;
        }
        None
    }

    /// Scale of every flat position.
    pub fn scale_ids(&self) -> Vec<usize> {
        self.lengths
            .iter()
            .enumerate()
            .flat_map(|(s, &n)| std::iter::repeat_n(s, n))
            .collect()
    }

    pub fn max_vocab(&self) -> usize {
        self.vocab.iter().copied().max().unwrap_or(0)
    }
}

/// Per-scale index arrays, coarsest scale first.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence {
    scales: Vec<Vec<u32>>,
}

impl TokenSequence {
    pub fn new(scales: Vec<Vec<u32>>) -> Self {
        Self { scales }
    }

    pub fn from_flat(layout: &TokenLayout, flat: &[u32]) -> Result<Self, CodecError> {
        if flat.len() != layout.total() {
            return Err(CodecError::Mismatch(format!(
                "{} tokens for a layout of {}",
                flat.len(),
                layout.total()
            )));
        }
        let scales = layout
            .offsets()
            .iter()
            .zip(&layout.lengths)
            .map(|(&o, &n)| flat[o..o + n].to_vec())
            .collect();
        let seq = Self { scales };
        seq.validate(layout)?;
        Ok(seq)
    }

    pub fn scales(&self) -> &[Vec<u32>] {
        &self.scales
    }

    pub fn scale(&self, s: usize) -> &[u32] {
        &self.scales[s]
    }

    pub fn scale_count(&self) -> usize {
        self.scales.len()
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.scales.iter().map(Vec::len).collect()
    }

    pub fn len(&self) -> usize {
        self.scales.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flat(&self) -> Vec<u32> {
        self.scales.concat()
    }

    pub fn validate(&self, layout: &TokenLayout) -> Result<(), CodecError> {
        if self.lengths() != layout.lengths {
            return Err(CodecError::Mismatch(format!(
                "token lengths {:?} do not match layout {:?}",
                self.lengths(),
                layout.lengths
            )));
        }
        for (s, (tokens, &size)) in self.scales.iter().zip(&layout.vocab).enumerate() {
            if let Some((position, &index)) = tokens.iter().enumerate().find(|(_, &t)| t as usize >= size) {
                return Err(CodecError::TokenOutOfRange {
                    scale: s + 1,
                    position,
                    index,
                    size,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TokenFileError {
    #[error("bad magic")]
    BadMagic,
    #[error("version mismatch: file has {found}, supported {supported}")]
    VersionMismatch { found: u16, supported: u16 },
    #[error("truncated: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("payload length mismatch: {extra} bytes beyond the declared tokens")]
    LengthMismatch { extra: usize },
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("token {index} at scale {scale} exceeds vocabulary {size}")]
    IndexOutOfRange { scale: usize, index: u32, size: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl TokenFileError {
    pub fn code(&self) -> &'static str {
        match self {
            TokenFileError::BadMagic => "bad-magic",
            TokenFileError::VersionMismatch { .. } => "version-mismatch",
            TokenFileError::Truncated { .. } => "truncated",
            TokenFileError::LengthMismatch { .. } => "length-mismatch",
            TokenFileError::InvalidHeader(_) => "invalid-header",
            TokenFileError::IndexOutOfRange { .. } => "index-out-of-range",
            TokenFileError::Io(_) => "io",
        }
    }
}

pub fn encode_tokens(layout: &TokenLayout, y: &TokenSequence) -> Result<Vec<u8>, CodecError> {
    y.validate(layout)?;
    if layout.scale_count() > u16::MAX as usize
        || layout.lengths.iter().any(|&n| n > u16::MAX as usize)
        || layout.vocab.iter().any(|&v| v > u32::MAX as usize)
    {
        return Err(CodecError::Config("layout does not fit the token file header".into()));
    }
    let mut out = Vec::with_capacity(8 + 6 * layout.scale_count() + 4 * y.len());
    out.extend_from_slice(TOKEN_MAGIC);
    out.extend_from_slice(&TOKEN_VERSION.to_le_bytes());
    out.extend_from_slice(&(layout.scale_count() as u16).to_le_bytes());
    for (&n, &v) in layout.lengths.iter().zip(&layout.vocab) {
        out.extend_from_slice(&(n as u16).to_le_bytes());
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for t in y.flat() {
        out.extend_from_slice(&t.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_tokens(bytes: &[u8]) -> Result<(TokenLayout, TokenSequence), TokenFileError> {
    if bytes.len() < 4 || &bytes[..4] != TOKEN_MAGIC {
        return Err(TokenFileError::BadMagic);
    }
    let need = |expected: usize| {
        if bytes.len() < expected {
            Err(TokenFileError::Truncated {
                expected,
                actual: bytes.len(),
            })
        } else {
            Ok(())
        }
    };
    need(8)?;
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != TOKEN_VERSION {
        return Err(TokenFileError::VersionMismatch {
            found: version,
            supported: TOKEN_VERSION,
        });
    }
    let count = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    if count == 0 {
        return Err(TokenFileError::InvalidHeader("zero scales".into()));
    }
    let header = 8 + 6 * count;
    need(header)?;
    let mut lengths = Vec::with_capacity(count);
    let mut vocab = Vec::with_capacity(count);
    for s in 0..count {
        let at = 8 + 6 * s;
        lengths.push(u16::from_le_bytes([bytes[at], bytes[at + 1]]) as usize);
        let v = u32::from_le_bytes(bytes[at + 2..at + 6].try_into().expect("4 bytes")) as usize;
        if v == 0 {
            return Err(TokenFileError::InvalidHeader(format!(
                "scale {} has an empty vocabulary",
                s + 1
            )));
        }
        vocab.push(v);
    }
    let total: usize = lengths.iter().sum();
    let expected = header + 4 * total;
    need(expected)?;
    if bytes.len() > expected {
        return Err(TokenFileError::LengthMismatch {
            extra: bytes.len() - expected,
        });
    }
    let flat: Vec<u32> = bytes[header..]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let layout = TokenLayout { lengths, vocab };
    let mut scales = Vec::with_capacity(count);
    for (s, (&o, &n)) in layout.offsets().iter().zip(&layout.lengths).enumerate() {
        let tokens = flat[o..o + n].to_vec();
        if let Some(&index) = tokens.iter().find(|&&t| t as usize >= layout.vocab[s]) {
            return Err(TokenFileError::IndexOutOfRange {
                scale: s + 1,
                index,
                size: layout.vocab[s],
            });
        }
        scales.push(tokens);
    }
    Ok((layout, TokenSequence::new(scales)))
}

pub fn write_tokens(path: impl AsRef<Path>, layout: &TokenLayout, y: &TokenSequence) -> Result<(), CodecError> {
    fs::write(path, encode_tokens(layout, y)?).map_err(|e| CodecError::TokenFile(e.into()))
}

pub fn read_tokens(path: impl AsRef<Path>) -> Result<(TokenLayout, TokenSequence), TokenFileError> {
    decode_tokens(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_layout() -> TokenLayout {
        TokenLayout::new(vec![16, 24, 32, 40, 49, 49], vec![512; 6]).unwrap()
    }

    #[test]
    fn reference_header_declares_210_indices() {
        let layout = reference_layout();
        let y = TokenSequence::from_flat(&layout, &vec![7; 210]).unwrap();
        let bytes = encode_tokens(&layout, &y).unwrap();
        assert_eq!(bytes.len(), 8 + 6 * 6 + 4 * 210);
        let (l2, y2) = decode_tokens(&bytes).unwrap();
        assert_eq!((l2, y2), (layout, y));
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let layout = reference_layout();
        let y = TokenSequence::from_flat(&layout, &vec![1; 210]).unwrap();
        let bytes = encode_tokens(&layout, &y).unwrap();
        assert!(matches!(
            decode_tokens(&bytes[..bytes.len() - 3]),
            Err(TokenFileError::Truncated { .. })
        ));
        let mut longer = bytes.clone();
        longer.extend_from_slice(&[0; 4]);
        assert!(matches!(
            decode_tokens(&longer),
            Err(TokenFileError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn layout_positions() {
        let layout = TokenLayout::new(vec![2, 3], vec![4, 5]).unwrap();
        assert_eq!(layout.offsets(), vec![0, 2]);
        assert_eq!(layout.locate(3), Some((1, 1)));
        assert_eq!(layout.locate(5), None);
        assert_eq!(layout.scale_ids(), vec![0, 0, 1, 1, 1]);
        let bad = TokenSequence::new(vec![vec![0, 4], vec![0, 0, 0]]);
        assert!(matches!(
            bad.validate(&layout),
            Err(CodecError::TokenOutOfRange { scale: 1, .. })
        ));
    }
}
