//! Finite scalar quantization: a scaled tanh bounds each channel, rounding
//! snaps it onto a small integer grid, and the product of the per-channel
//! grids is the implied codebook. Indices are mixed-radix codes of the level
//! tuple with channel 1 most significant.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{NumericsError, Tensor, Var};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FsqError {
    #[error("level spec has no channels")]
    Empty,
    #[error("channel {channel} has {levels} levels, at least 2 are required")]
    TooFewLevels { channel: usize, levels: u32 },
    #[error("codebook size overflows the 32-bit index width")]
    Overflow,
    #[error("expected {expected} channels, got {actual}")]
    Width { expected: usize, actual: usize },
    #[error("level {level} out of range for channel {channel} with {levels} levels")]
    LevelOutOfRange { channel: usize, level: i32, levels: u32 },
    #[error("index {index} out of range for codebook of size {size}")]
    IndexOutOfRange { index: u64, size: u64 },
}

/// Per-channel level counts.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct LevelSpec {
    levels: Vec<u32>,
    size: u32,
}

impl TryFrom<Vec<u32>> for LevelSpec {
    type Error = FsqError;
    fn try_from(levels: Vec<u32>) -> Result<Self, FsqError> {
        LevelSpec::new(&levels)
    }
}

impl From<LevelSpec> for Vec<u32> {
    fn from(spec: LevelSpec) -> Self {
        spec.levels
    }
}

impl LevelSpec {
    pub fn new(levels: &[u32]) -> Result<Self, FsqError> {
        let size = codebook_size(levels)?;
        Ok(Self {
            levels: levels.to_vec(),
            size: size as u32,
        })
    }

    pub fn levels(&self) -> &[u32] {
        &self.levels
    }

    pub fn channels(&self) -> usize {
        self.levels.len()
    }

    pub fn size(&self) -> usize {
        self.size as usize
    }

    /// Smallest and largest integer level of channel `i`.
    pub fn level_range(&self, i: usize) -> (i32, i32) {
        let l = self.levels[i] as i32;
        (-(l / 2), l - 1 - l / 2)
    }

    fn check_width(&self, actual: usize) -> Result<(), FsqError> {
        if actual != self.channels() {
            return Err(FsqError::Width {
                expected: self.channels(),
                actual,
            });
        }
        Ok(())
    }
}

/// Product of the level counts. Fails when any count is below 2 or the
/// product does not fit a `u32` index.
pub fn codebook_size(levels: &[u32]) -> Result<u64, FsqError> {
    if levels.is_empty() {
        return Err(FsqError::Empty);
    }
    let mut size: u64 = 1;
    for (channel, &l) in levels.iter().enumerate() {
        if l < 2 {
            return Err(FsqError::TooFewLevels { channel, levels: l });
        }
        size = size.checked_mul(l as u64).ok_or(FsqError::Overflow)?;
        if size > u32::MAX as u64 {
            return Err(FsqError::Overflow);
        }
    }
    Ok(size)
}

/// Scale and shift of the bounding tanh for `l` levels. Odd counts use
/// `floor(l/2) tanh(z)`; even counts shift the tanh by half a step so the grid
/// `-l/2 ..= l/2 - 1` is reachable and zero maps to zero.
fn bound_params(l: u32) -> (f64, f64, f64) {
    if l % 2 == 1 {
        ((l / 2) as f64, 0.0, 0.0)
    } else {
        let half = (l - 1) as f64 / 2.0;
        let offset = 0.5;
        (half, (offset / half).atanh(), offset)
    }
}

fn bound_scalar(z: f64, l: u32) -> f64 {
    let (half, shift, offset) = bound_params(l);
    half * (z + shift).tanh() - offset
}

fn bound_derivative_scalar(z: f64, l: u32) -> f64 {
    let (half, shift, _) = bound_params(l);
    let t = (z + shift).tanh();
    half * (1.0 - t * t)
}

fn round_level(b: f64, l: u32) -> i32 {
    let lo = -((l / 2) as i32);
    let hi = l as i32 - 1 - (l / 2) as i32;
    (b.round() as i32).clamp(lo, hi)
}

pub fn bound(z: &[f64], spec: &LevelSpec) -> Result<Vec<f64>, FsqError> {
    spec.check_width(z.len())?;
    Ok(z.iter().zip(spec.levels()).map(|(&z, &l)| bound_scalar(z, l)).collect())
}

pub fn bound_derivative(z: &[f64], spec: &LevelSpec) -> Result<Vec<f64>, FsqError> {
    spec.check_width(z.len())?;
    Ok(z.iter()
        .zip(spec.levels())
        .map(|(&z, &l)| bound_derivative_scalar(z, l))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantizedCode {
    pub levels: Vec<i32>,
    pub index: u32,
}

pub fn quantize(z: &[f64], spec: &LevelSpec) -> Result<QuantizedCode, FsqError> {
    let levels: Vec<i32> = bound(z, spec)?
        .into_iter()
        .zip(spec.levels())
        .map(|(b, &l)| round_level(b, l))
        .collect();
    let index = index_encode(&levels, spec)?;
    Ok(QuantizedCode { levels, index })
}

pub fn index_encode(levels: &[i32], spec: &LevelSpec) -> Result<u32, FsqError> {
    spec.check_width(levels.len())?;
    let mut index: u64 = 0;
    for (channel, (&level, &l)) in levels.iter().zip(spec.levels()).enumerate() {
        let (lo, hi) = spec.level_range(channel);
        if level < lo || level > hi {
            return Err(FsqError::LevelOutOfRange {
                channel,
                level,
                levels: l,
            });
        }
        index = index * l as u64 + (level - lo) as u64;
    }
    Ok(index as u32)
}

pub fn index_decode(index: u32, spec: &LevelSpec) -> Result<Vec<i32>, FsqError> {
    if index as usize >= spec.size() {
        return Err(FsqError::IndexOutOfRange {
            index: index as u64,
            size: spec.size() as u64,
        });
    }
    let mut rest = index;
    let mut levels = vec![0; spec.channels()];
    for channel in (0..spec.channels()).rev() {
        let l = spec.levels()[channel];
        levels[channel] = (rest % l) as i32 + spec.level_range(channel).0;
        rest /= l;
    }
    Ok(levels)
}

/// Dequantized value of an index: its level tuple as reals.
pub fn lookup(index: u32, spec: &LevelSpec) -> Result<Vec<f64>, FsqError> {
    Ok(index_decode(index, spec)?.into_iter().map(f64::from).collect())
}

/// Backward rule for the rounding step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StraightThrough {
    /// `f(z) + sg(round(f(z)) - f(z))`: gradient is the derivative of the bound.
    #[default]
    Bounded,
    /// `z + sg(round(f(z)) - z)`: gradient is the identity.
    Identity,
}

/// Quantizes every row of `z` (`[rows, channels]`) inside a graph. Returns the
/// dequantized levels, with gradients per `mode`, and one index per row.
pub fn quantize_var<'g>(
    z: Var<'g>,
    spec: &LevelSpec,
    mode: StraightThrough,
) -> Result<(Var<'g>, Vec<u32>), NumericsError> {
    let value = z.value();
    if value.shape().len() != 2 {
        return Err(NumericsError::Shape(format!(
            "quantize expects [rows, channels], got {:?}",
            value.shape()
        )));
    }
    spec.check_width(value.cols())?;
    let n = value.len();
    let mut hard = Vec::with_capacity(n);
    let mut smooth = Vec::with_capacity(n);
    let mut derivative = Vec::with_capacity(n);
    let mut indices = Vec::with_capacity(value.rows());
    for r in 0..value.rows() {
        let row = value.row(r);
        let code = quantize(row, spec)?;
        indices.push(code.index);
        for ((&zi, &l), level) in row.iter().zip(spec.levels()).zip(code.levels) {
            hard.push(level as f64);
            match mode {
                StraightThrough::Bounded => {
                    smooth.push(bound_scalar(zi, l));
                    derivative.push(bound_derivative_scalar(zi, l));
                }
                StraightThrough::Identity => {
                    smooth.push(zi);
                    derivative.push(1.0);
                }
            }
        }
    }
    let shape = value.shape().to_vec();
    let out = z.straight_through(Tensor::new(&shape, hard)?, Tensor::new(&shape, smooth)?, derivative)?;
    Ok((out, indices))
}

impl From<FsqError> for NumericsError {
    fn from(e: FsqError) -> Self {
        NumericsError::Shape(e.to_string())
    }
}
