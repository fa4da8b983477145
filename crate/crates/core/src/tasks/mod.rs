//! Task adaptations over frozen codec and generator checkpoints: token
//! composition, trajectory control, single-pass editing and inpainting.

mod compose;
mod control;
mod inpaint;

use thiserror::Error;

pub use compose::{compose_spatial, compose_temporal};
pub use control::{control_generate, edit, trajectory_motion, ControlRequest, EditRequest, TaskOutput};
pub use inpaint::{
    blank_region, inpaint, inpaint_positions, token_window, BodyRegion, MaskSpec, TemporalRegion,
    DEFAULT_INPAINT_FRACTION,
};

use crate::codec::CodecError;
use crate::generator::GeneratorError;
use crate::motiondata::MotionError;
use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("checkpoints must be trained before use")]
    Untrained,
    #[error("unknown edit label {0}")]
    UnknownLabel(usize),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Motion(#[from] MotionError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}
