use crate::numerics::Tensor;

use super::skeleton::{PartSet, Skeleton, FEATURE_DIM, JOINT_COUNT, ROOT_FEATURES};
use super::MotionError;

pub const DEFAULT_FPS: f64 = 20.0;

/// `N x D` pose sequence. Each frame holds root translation (3, meters),
/// root heading (1, radians about the vertical axis) and root-relative joint
/// positions expressed in the heading frame ((J - 1) x 3, meters).
#[derive(Clone, Debug, PartialEq)]
pub struct MotionSequence {
    frames: Tensor,
    fps: f64,
}

impl MotionSequence {
    pub fn new(frames: Tensor, fps: f64) -> Result<Self, MotionError> {
        if frames.shape().len() != 2 || frames.cols() != FEATURE_DIM {
            return Err(MotionError::Shape(format!(
                "expected [N, {FEATURE_DIM}] frames, got {:?}",
                frames.shape()
            )));
        }
        if !frames.is_finite() {
            return Err(MotionError::NonFinite);
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(MotionError::Shape(format!("fps must be positive, got {fps}")));
        }
        Ok(Self { frames, fps })
    }

    pub fn frames(&self) -> &Tensor {
        &self.frames
    }

    pub fn into_frames(self) -> Tensor {
        self.frames
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn feature_dim(&self) -> usize {
        self.frames.cols()
    }

    pub fn joint_count(&self) -> usize {
        JOINT_COUNT
    }

    pub fn root_translation(&self, t: usize) -> [f64; 3] {
        let r = self.frames.row(t);
        [r[0], r[1], r[2]]
    }

    pub fn heading(&self, t: usize) -> f64 {
        self.frames.row(t)[3]
    }

    /// Root-relative position of joint `j` in the heading frame (pelvis is the origin).
    pub fn local_joint(&self, t: usize, j: usize) -> [f64; 3] {
        if j == 0 {
            return [0.0; 3];
        }
        let c = ROOT_FEATURES + 3 * (j - 1);
        let r = self.frames.row(t);
        [r[c], r[c + 1], r[c + 2]]
    }

    /// World-space joint positions of frame `t` (root translation and heading applied).
    pub fn global_joints(&self, t: usize) -> Vec<[f64; 3]> {
        let root = self.root_translation(t);
        let h = self.heading(t);
        (0..JOINT_COUNT)
            .map(|j| {
                let l = rotate_heading(self.local_joint(t, j), h);
                [root[0] + l[0], root[1] + l[1], root[2] + l[2]]
            })
            .collect()
    }

    /// Copy with every value rounded through `f32`.
    pub fn to_single_precision(&self) -> Self {
        Self {
            frames: self.frames.map(|v| v as f32 as f64),
            fps: self.fps as f32 as f64,
        }
    }
}

/// Rotates a heading-frame vector into world space (rotation about +y).
pub fn rotate_heading(v: [f64; 3], heading: f64) -> [f64; 3] {
    let (s, c) = heading.sin_cos();
    [v[0] * c + v[2] * s, v[1], -v[0] * s + v[2] * c]
}

/// Features of one scale: the columns of its part set, in ascending order.
#[derive(Clone, Debug, PartialEq)]
pub struct PartFeature {
    pub scale: usize,
    pub parts: PartSet,
    pub columns: Vec<usize>,
    pub frames: Tensor,
}

impl PartFeature {
    pub fn dim(&self) -> usize {
        self.columns.len()
    }
}

/// Checks that every part set contains its predecessor and that the last one
/// covers the whole body.
pub fn check_nested(part_sets: &[PartSet]) -> Result<(), MotionError> {
    if part_sets.is_empty() {
        return Err(MotionError::Config("at least one scale is required".into()));
    }
    for (s, pair) in part_sets.windows(2).enumerate() {
        if !pair[1].is_superset_of(pair[0]) {
            return Err(MotionError::Config(format!(
                "scale {} parts {:?} do not contain scale {} parts {:?}",
                s + 2,
                pair[1],
                s + 1,
                pair[0]
            )));
        }
    }
    if part_sets.iter().any(|p| p.is_empty()) {
        return Err(MotionError::Config("empty part set".into()));
    }
    if *part_sets.last().expect("non-empty") != PartSet::FULL {
        return Err(MotionError::Config("finest scale must cover every part".into()));
    }
    Ok(())
}

/// Splits `x` into one feature block per scale. Scale indices are 1-based.
pub fn decompose(
    x: &MotionSequence,
    skeleton: &Skeleton,
    part_sets: &[PartSet],
) -> Result<Vec<PartFeature>, MotionError> {
    check_nested(part_sets)?;
    part_sets
        .iter()
        .enumerate()
        .map(|(i, &parts)| {
            let columns = skeleton.columns_of(parts);
            let frames = x.frames().select_cols(&columns)?;
            Ok(PartFeature {
                scale: i + 1,
                parts,
                columns,
                frames,
            })
        })
        .collect()
}

/// Overlays every scale's columns onto a zero frame array, finest scale last.
pub fn reassemble(features: &[PartFeature], frames: usize, fps: f64) -> Result<MotionSequence, MotionError> {
    let mut out = Tensor::zeros(&[frames, FEATURE_DIM]);
    for f in features {
        if f.frames.rows() != frames {
            return Err(MotionError::Shape("part features disagree on frame count".into()));
        }
        for t in 0..frames {
            let src = f.frames.row(t);
            let dst = out.row_mut(t);
            for (k, &c) in f.columns.iter().enumerate() {
                dst[c] = src[k];
            }
        }
    }
    MotionSequence::new(out, fps)
}
