use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{decode, encode, CodecCheckpoint};
use crate::generator::{sample, GeneratorCheckpoint, SampleOptions};
use crate::motiondata::{MotionSequence, PartGroup, PartSet, Skeleton};

use super::control::{require_trained, resolve_condition, TaskOutput};
use super::TaskError;

/// Share of frames hidden by default.
pub const DEFAULT_INPAINT_FRACTION: f64 = 0.7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemporalRegion {
    Prefix,
    Suffix,
    InBetween,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BodyRegion {
    /// Torso, head and arms.
    Upper,
    /// Legs. The pelvis trajectory stays visible.
    Lower,
}

impl BodyRegion {
    pub fn parts(self) -> PartSet {
        match self {
            BodyRegion::Upper => PartSet::of(&[PartGroup::Torso, PartGroup::Head, PartGroup::Arms]),
            BodyRegion::Lower => PartSet::of(&[PartGroup::Legs]),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MaskSpec {
    Temporal { region: TemporalRegion, fraction: f64 },
    Spatial(BodyRegion),
}

impl MaskSpec {
    /// Hidden frame range `[start, end)` for a temporal mask.
    pub fn frame_range(&self, frames: usize) -> Result<Option<(usize, usize)>, TaskError> {
        let MaskSpec::Temporal { region, fraction } = *self else {
            return Ok(None);
        };
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(TaskError::Config(format!("inpaint fraction {fraction} outside (0, 1)")));
        }
        let hidden = (fraction * frames as f64).round() as usize;
        Ok(Some(match region {
            TemporalRegion::Prefix => (0, hidden),
            TemporalRegion::Suffix => (frames - hidden, frames),
            TemporalRegion::InBetween => {
                let start = (frames - hidden) / 2;
                (start, start + hidden)
            }
        }))
    }
}

/// Frames `[start, end)` covered by token `j` of a scale with `tokens` tokens.
pub fn token_window(j: usize, tokens: usize, frames: usize) -> (usize, usize) {
    (j * frames / tokens, ((j + 1) * frames).div_ceil(tokens))
}

/// Flat token positions to regenerate. Temporal masks hide a token only when
/// its whole window lies inside the hidden frames. Spatial masks hide every
/// scale from the first one that brings in a hidden part.
pub fn inpaint_positions(codec: &CodecCheckpoint, spec: &MaskSpec) -> Result<Vec<usize>, TaskError> {
    let layout = codec.layout();
    let offsets = layout.offsets();
    let frames = codec.config.frames;
    let mut positions = Vec::new();
    match spec {
        MaskSpec::Temporal { .. } => {
            let (start, end) = spec.frame_range(frames)?.expect("temporal");
            for (s, &n) in layout.lengths.iter().enumerate() {
                for j in 0..n {
                    let (a, b) = token_window(j, n, frames);
                    if a >= start && b <= end {
                        positions.push(offsets[s] + j);
                    }
                }
            }
        }
        MaskSpec::Spatial(region) => {
            let hidden = region.parts();
            if let Some(first) = codec.config.scales.iter().position(|sc| sc.parts.intersects(hidden)) {
                positions.extend(offsets[first]..layout.total());
            }
        }
    }
    Ok(positions)
}

/// Copy of `x` with the hidden region replaced by the training mean, which is
/// zero in the codec's normalized feature space.
pub fn blank_region(x: &MotionSequence, codec: &CodecCheckpoint, spec: &MaskSpec) -> Result<MotionSequence, TaskError> {
    let mut frames = x.frames().clone();
    let mean = &codec.normalizer.mean;
    match spec {
        MaskSpec::Temporal { .. } => {
            let (start, end) = spec.frame_range(x.len())?.expect("temporal");
            for r in start..end {
                frames.row_mut(r).copy_from_slice(mean);
            }
        }
        MaskSpec::Spatial(region) => {
            let cols = Skeleton::standard().columns_of(region.parts());
            for r in 0..frames.rows() {
                let row = frames.row_mut(r);
                for &c in &cols {
                    row[c] = mean[c];
                }
            }
        }
    }
    Ok(MotionSequence::new(frames, x.fps())?)
}

pub fn inpaint(
    x: &MotionSequence,
    spec: &MaskSpec,
    codec: &CodecCheckpoint,
    generator: &GeneratorCheckpoint,
    condition: Option<usize>,
    options: SampleOptions,
    rng: &mut impl Rng,
) -> Result<TaskOutput, TaskError> {
    require_trained(codec, generator)?;
    let condition = resolve_condition(generator, condition)?;
    let visible = blank_region(x, codec, spec)?;
    let tokens = encode(&visible, codec)?;
    let mut initial: Vec<Option<u32>> = tokens.flat().into_iter().map(Some).collect();
    for p in inpaint_positions(codec, spec)? {
        initial[p] = None;
    }
    let tokens = sample(generator, condition, Some(&initial), options, rng)?;
    Ok(TaskOutput {
        motion: decode(&tokens, codec)?,
        tokens,
    })
}
