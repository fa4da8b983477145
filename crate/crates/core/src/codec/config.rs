use serde::{Deserialize, Serialize};

use crate::fsq::{LevelSpec, StraightThrough};
use crate::motiondata::{check_nested, PartGroup, PartSet};

use super::CodecError;

/// Two stride-2 convolution blocks per encoder.
pub const DOWNSAMPLE: usize = 4;
pub const DEFAULT_FRAMES: usize = 64;
pub const DEFAULT_LATENT_DIM: usize = 32;
pub const DEFAULT_HIDDEN: usize = 48;
pub const DEFAULT_LEVELS: [u32; 3] = [8, 8, 8];
/// Each scale quantizes on a grid half as coarse as the one before.
pub const DEFAULT_STEP_DECAY: f64 = 0.5;

/// Reference token lengths for a 49-step latent, coarsest scale first.
const REFERENCE_LATENT: usize = 49;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quantizer {
    #[default]
    Fsq,
    /// No projection or rounding: the interpolated residual passes through unchanged.
    Bypass,
}

/// Whether scales own their quantizer projections or share one pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Projection {
    #[default]
    PerScale,
    Shared,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleSpec {
    pub parts: PartSet,
    pub tokens: usize,
    pub levels: LevelSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleConfig {
    pub frames: usize,
    pub latent_dim: usize,
    pub hidden: usize,
    pub scales: Vec<ScaleSpec>,
    pub quantizer: Quantizer,
    pub straight_through: StraightThrough,
    #[serde(default)]
    pub projection: Projection,
    /// Grid spacing of scale `s` (1-based) is `step_decay^(s-1)`.
    #[serde(default = "unit")]
    pub step_decay: f64,
}

fn unit() -> f64 {
    1.0
}

/// Maps a reference length (defined for a 49-step latent) onto `latent` steps,
/// rounding up so no scale collapses below its share.
pub fn scaled_token_length(reference: usize, latent: usize) -> usize {
    if latent == REFERENCE_LATENT {
        return reference;
    }
    (reference * latent).div_ceil(REFERENCE_LATENT).clamp(1, latent)
}

fn parts(groups: &[PartGroup]) -> PartSet {
    PartSet::of(groups)
}

fn preset(count: usize) -> Result<Vec<(PartSet, usize)>, CodecError> {
    use PartGroup::*;
    let six = vec![
        (parts(&[Pelvis]), 16),
        (parts(&[Pelvis, Torso]), 24),
        (parts(&[Pelvis, Torso, Legs]), 32),
        (parts(&[Pelvis, Torso, Legs, Arms]), 40),
        (PartSet::FULL, 49),
        (PartSet::FULL, 49),
    ];
    Ok(match count {
        1 => vec![(PartSet::FULL, 49)],
        2 => vec![(parts(&[Pelvis]), 16), (PartSet::FULL, 49)],
        4 => vec![
            (parts(&[Pelvis, Torso]), 16),
            (parts(&[Pelvis, Torso, Legs]), 24),
            (parts(&[Pelvis, Torso, Legs, Arms]), 32),
            (PartSet::FULL, 49),
        ],
        6 => six,
        8 => {
            let mut eight = six;
            eight.extend([(PartSet::FULL, 49), (PartSet::FULL, 49)]);
            eight
        }
        other => {
            return Err(CodecError::Config(format!(
                "no preset with {other} scales (available: 1, 2, 4, 6, 8)"
            )))
        }
    })
}

impl ScaleConfig {
    /// Preset with `count` scales (1, 2, 4, 6 or 8) for `frames`-frame clips.
    pub fn preset(count: usize, frames: usize) -> Result<Self, CodecError> {
        if frames == 0 || !frames.is_multiple_of(DOWNSAMPLE) {
            return Err(CodecError::FrameCount {
                frames,
                factor: DOWNSAMPLE,
            });
        }
        let latent = frames / DOWNSAMPLE;
        let levels = LevelSpec::new(&DEFAULT_LEVELS)?;
        let scales = preset(count)?
            .into_iter()
            .map(|(parts, reference)| ScaleSpec {
                parts,
                tokens: scaled_token_length(reference, latent),
                levels: levels.clone(),
            })
            .collect();
        let config = Self {
            frames,
            latent_dim: DEFAULT_LATENT_DIM,
            hidden: DEFAULT_HIDDEN,
            scales,
            quantizer: Quantizer::Fsq,
            straight_through: StraightThrough::Bounded,
            projection: Projection::Shared,
            step_decay: DEFAULT_STEP_DECAY,
        };
        config.validate()?;
        Ok(config)
    }

    /// Same part sets with every scale at the full latent length and no quantizer.
    pub fn bypass(mut self) -> Self {
        let n = self.latent_len();
        for s in &mut self.scales {
            s.tokens = n;
        }
        self.quantizer = Quantizer::Bypass;
        self
    }

    /// Quantization grid spacing of scale `s` (0-based).
    pub fn step(&self, s: usize) -> f64 {
        self.step_decay.powi(s as i32)
    }

    /// Parameter prefix of scale `s`'s quantizer projections.
    pub fn quantizer_prefix(&self, s: usize) -> String {
        match self.projection {
            Projection::PerScale => format!("q{s}"),
            Projection::Shared => "q".into(),
        }
    }

    pub fn latent_len(&self) -> usize {
        self.frames / DOWNSAMPLE
    }

    pub fn scale_count(&self) -> usize {
        self.scales.len()
    }

    pub fn token_lengths(&self) -> Vec<usize> {
        self.scales.iter().map(|s| s.tokens).collect()
    }

    pub fn vocab_sizes(&self) -> Vec<usize> {
        self.scales.iter().map(|s| s.levels.size()).collect()
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        if self.frames == 0 || !self.frames.is_multiple_of(DOWNSAMPLE) {
            return Err(CodecError::FrameCount {
                frames: self.frames,
                factor: DOWNSAMPLE,
            });
        }
        if self.latent_dim == 0 || self.hidden == 0 {
            return Err(CodecError::Config("latent and hidden widths must be positive".into()));
        }
        let part_sets: Vec<PartSet> = self.scales.iter().map(|s| s.parts).collect();
        check_nested(&part_sets).map_err(|e| CodecError::Config(e.to_string()))?;
        let n = self.latent_len();
        for (i, pair) in self.scales.windows(2).enumerate() {
            if pair[0].tokens > pair[1].tokens {
                return Err(CodecError::Config(format!(
                    "token length of scale {} exceeds scale {}",
                    i + 1,
                    i + 2
                )));
            }
        }
        if self.scales.iter().any(|s| s.tokens == 0) {
            return Err(CodecError::Config("token lengths must be positive".into()));
        }
        if !(self.step_decay > 0.0 && self.step_decay <= 1.0) {
            return Err(CodecError::Config(format!(
                "step decay {} outside (0, 1]",
                self.step_decay
            )));
        }
        if self.projection == Projection::Shared
            && self
                .scales
                .windows(2)
                .any(|w| w[0].levels.channels() != w[1].levels.channels())
        {
            return Err(CodecError::Config(
                "a shared projection needs the same channel count on every scale".into(),
            ));
        }
        if self.scales.last().map(|s| s.tokens) != Some(n) {
            return Err(CodecError::Config(format!("finest scale must have {n} tokens")));
        }
        Ok(())
    }
}

impl Default for ScaleConfig {
    fn default() -> Self {
        Self::preset(6, DEFAULT_FRAMES).expect("default preset is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_lengths_at_196_frames() {
        let c = ScaleConfig::preset(6, 196).unwrap();
        assert_eq!(c.token_lengths(), vec![16, 24, 32, 40, 49, 49]);
        assert_eq!(c.token_lengths().iter().sum::<usize>(), 210);
    }

    #[test]
    fn default_lengths_at_64_frames() {
        let c = ScaleConfig::default();
        assert_eq!(c.token_lengths(), vec![6, 8, 11, 14, 16, 16]);
        assert_eq!(c.vocab_sizes(), vec![512; 6]);
        assert_eq!(ScaleConfig::preset(2, 64).unwrap().token_lengths(), vec![6, 16]);
        assert_eq!(ScaleConfig::preset(4, 64).unwrap().token_lengths(), vec![6, 8, 11, 16]);
        assert_eq!(ScaleConfig::preset(8, 64).unwrap().scale_count(), 8);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(matches!(ScaleConfig::preset(6, 66), Err(CodecError::FrameCount { .. })));
        assert!(ScaleConfig::preset(3, 64).is_err());
        let mut c = ScaleConfig::default();
        c.scales[1].tokens = 3;
        assert!(c.validate().is_err());
        let mut c = ScaleConfig::default();
        c.scales.swap(0, 1);
        assert!(c.validate().is_err());
    }

    #[test]
    fn bypass_uses_full_length() {
        let c = ScaleConfig::default().bypass();
        assert_eq!(c.token_lengths(), vec![16; 6]);
        assert_eq!(c.quantizer, Quantizer::Bypass);
        c.validate().unwrap();
    }
}
