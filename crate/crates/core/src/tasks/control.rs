use rand::Rng;

use crate::codec::{decode, encode, CodecCheckpoint, TokenSequence};
use crate::generator::{edit_tokens, sample, GeneratorCheckpoint, SampleOptions};
use crate::motiondata::{MotionSequence, DEFAULT_FPS, FEATURE_DIM, ROOT_FEATURES};
use crate::numerics::Tensor;

use super::TaskError;

#[derive(Clone, Debug, PartialEq)]
pub struct ControlRequest {
    /// Pelvis translation and heading per frame, `[N, 4]`.
    pub trajectory: Tensor,
    /// Condition label; the generator's null label when absent.
    pub condition: Option<usize>,
}

impl ControlRequest {
    pub fn from_motion(x: &MotionSequence, condition: Option<usize>) -> Result<Self, TaskError> {
        let trajectory = x.frames().select_cols(&(0..ROOT_FEATURES).collect::<Vec<_>>())?;
        Ok(Self { trajectory, condition })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskOutput {
    pub motion: MotionSequence,
    pub tokens: TokenSequence,
}

pub(crate) fn resolve_condition(generator: &GeneratorCheckpoint, condition: Option<usize>) -> Result<usize, TaskError> {
    match condition.or(generator.config.null_condition) {
        Some(c) => Ok(c),
        None => Err(TaskError::Config(
            "generator has no null condition; a label is required".into(),
        )),
    }
}

pub(crate) fn require_trained(codec: &CodecCheckpoint, generator: &GeneratorCheckpoint) -> Result<(), TaskError> {
    if !codec.is_trained() || !generator.is_trained() {
        return Err(TaskError::Untrained);
    }
    if codec.layout() != generator.layout {
        return Err(TaskError::Config("codec and generator token layouts differ".into()));
    }
    Ok(())
}

/// Motion whose pelvis follows `trajectory` and whose other features are zero.
pub fn trajectory_motion(trajectory: &Tensor) -> Result<MotionSequence, TaskError> {
    if trajectory.shape().len() != 2 || trajectory.cols() != ROOT_FEATURES {
        return Err(TaskError::Config(format!(
            "trajectory must be [frames, {ROOT_FEATURES}], got {:?}",
            trajectory.shape()
        )));
    }
    let frames = Tensor::from_fn(trajectory.rows(), FEATURE_DIM, |r, c| {
        if c < ROOT_FEATURES {
            trajectory.get2(r, c)
        } else {
            0.0
        }
    });
    Ok(MotionSequence::new(frames, DEFAULT_FPS)?)
}

/// Quantizes the trajectory, keeps its first-scale tokens as fixed context and
/// lets the generator fill every other scale.
pub fn control_generate(
    req: &ControlRequest,
    codec: &CodecCheckpoint,
    generator: &GeneratorCheckpoint,
    options: SampleOptions,
    rng: &mut impl Rng,
) -> Result<TaskOutput, TaskError> {
    require_trained(codec, generator)?;
    if req.trajectory.rows() != codec.config.frames {
        return Err(TaskError::Config(format!(
            "trajectory has {} frames, codec expects {}",
            req.trajectory.rows(),
            codec.config.frames
        )));
    }
    let condition = resolve_condition(generator, req.condition)?;
    let control = encode(&trajectory_motion(&req.trajectory)?, codec)?;
    let mut initial: Vec<Option<u32>> = vec![None; control.len()];
    for (i, &t) in control.scale(0).iter().enumerate() {
        initial[i] = Some(t);
    }
    let tokens = sample(generator, condition, Some(&initial), options, rng)?;
    Ok(TaskOutput {
        motion: decode(&tokens, codec)?,
        tokens,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EditRequest {
    pub source: TokenSequence,
    pub label: usize,
    /// Source positions hidden from the model.
    pub source_mask: Option<Vec<bool>>,
}

/// Predicts the edited tokens in a single generator pass.
pub fn edit(req: &EditRequest, generator: &GeneratorCheckpoint) -> Result<TokenSequence, TaskError> {
    if req.label >= generator.config.conditions {
        return Err(TaskError::UnknownLabel(req.label));
    }
    Ok(edit_tokens(
        generator,
        &req.source,
        req.label,
        req.source_mask.as_deref(),
    )?)
}
