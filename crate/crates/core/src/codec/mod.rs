//! Multi-scale residual codec: one convolutional encoder per nested body-part
//! scale, temporal interpolation to per-scale token lengths, finite scalar
//! quantization of residuals, additive aggregation and a shared decoder.

mod config;
mod model;
mod tokens;
mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{scaled_token_length, Projection, Quantizer, ScaleConfig, ScaleSpec, DEFAULT_FRAMES, DOWNSAMPLE};
pub use model::{
    codec_loss, decode, decode_latent, decode_selected, dequantize, drop_scale_decode, encode, encode_latent,
    partial_decode, plain_autoencode, reconstruct, CodecCheckpoint, CodecTrainingMeta, LatentEncoding, Normalizer,
};
pub use tokens::{
    decode_tokens, encode_tokens, read_tokens, write_tokens, TokenFileError, TokenLayout, TokenSequence, TOKEN_MAGIC,
    TOKEN_VERSION,
};
pub use train::{clip_loss, clip_loss_var, train_codec, train_codec_observed, CodecTrainConfig};

use crate::fsq::FsqError;
use crate::motiondata::MotionError;
use crate::numerics::{read_container, write_container, ContainerError, NumericsError};

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("frame count {frames} is not divisible by the down-sample factor {factor}")]
    FrameCount { frames: usize, factor: usize },
    #[error("mismatch: {0}")]
    Mismatch(String),
    #[error("token {index} at scale {scale}, position {position} exceeds vocabulary {size}")]
    TokenOutOfRange {
        scale: usize,
        position: usize,
        index: u32,
        size: usize,
    },
    #[error("scale {scale} out of range 1..={count}")]
    ScaleOutOfRange { scale: usize, count: usize },
    #[error("the bypass quantizer produces no tokens")]
    NoTokens,
    #[error("empty training set")]
    EmptyDataset,
    #[error("training diverged at step {step} (loss {loss})")]
    Diverged { step: usize, loss: f64 },
    #[error("checkpoint is not a codec: {0}")]
    WrongCheckpoint(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Fsq(#[from] FsqError),
    #[error(transparent)]
    Motion(#[from] MotionError),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error(transparent)]
    TokenFile(#[from] TokenFileError),
}

pub const CODEC_KIND: &str = "codec";

#[derive(Serialize, Deserialize)]
struct CodecMetadata {
    kind: String,
    config: ScaleConfig,
    normalizer: Normalizer,
    meta: CodecTrainingMeta,
}

pub fn save_codec(path: impl AsRef<Path>, ckpt: &CodecCheckpoint) -> Result<(), CodecError> {
    let meta = CodecMetadata {
        kind: CODEC_KIND.into(),
        config: ckpt.config.clone(),
        normalizer: ckpt.normalizer.clone(),
        meta: ckpt.meta.clone(),
    };
    let json = serde_json::to_string(&meta).map_err(|e| CodecError::Config(e.to_string()))?;
    Ok(write_container(path, &json, &ckpt.params)?)
}

pub fn load_codec(path: impl AsRef<Path>) -> Result<CodecCheckpoint, CodecError> {
    let (json, params) = read_container(path)?;
    let meta: CodecMetadata = serde_json::from_str(&json).map_err(|e| CodecError::WrongCheckpoint(e.to_string()))?;
    if meta.kind != CODEC_KIND {
        return Err(CodecError::WrongCheckpoint(format!(
            "found a `{}` checkpoint",
            meta.kind
        )));
    }
    meta.config.validate()?;
    let reference = CodecCheckpoint::init(meta.config.clone(), 0)?;
    for (name, t) in reference.params.iter() {
        match params.get(name) {
            Some(p) if p.shape() == t.shape() => {}
            _ => {
                return Err(CodecError::WrongCheckpoint(format!(
                    "parameter `{name}` missing or misshapen"
                )))
            }
        }
    }
    if params.len() != reference.params.len() {
        return Err(CodecError::WrongCheckpoint("unexpected extra parameters".into()));
    }
    Ok(CodecCheckpoint {
        config: meta.config,
        params,
        normalizer: meta.normalizer,
        meta: meta.meta,
    })
}
