use crate::codec::{encode, train_codec_observed, CodecCheckpoint};
use crate::generator::{
    edit_config, train_edit, train_generator_observed, ConditionedTokens, EditExample, GeneratorCheckpoint,
};
use crate::motiondata::{EditLabel, LabeledMotion, MotionSequence};

use super::config::ExperimentConfig;
use super::HarnessError;

// Stage seeds are derived from the experiment seed so stages never share a stream.
const CODEC_STREAM: u64 = 0x636f_6465;
const GENERATOR_STREAM: u64 = 0x6765_6e65;
const EDIT_STREAM: u64 = 0x6564_6974;

pub fn train_codec_stage(
    data: &[LabeledMotion],
    cfg: &ExperimentConfig,
    on_epoch: impl FnMut(usize, f64),
) -> Result<CodecCheckpoint, HarnessError> {
    let motions: Vec<MotionSequence> = data.iter().map(|m| m.motion.clone()).collect();
    Ok(train_codec_observed(
        &motions,
        cfg.scale_config()?,
        &cfg.codec_train,
        cfg.seed ^ CODEC_STREAM,
        on_epoch,
    )?)
}

pub fn generator_dataset(
    codec: &CodecCheckpoint,
    data: &[LabeledMotion],
) -> Result<Vec<ConditionedTokens>, HarnessError> {
    data.iter()
        .map(|m| {
            Ok(ConditionedTokens {
                tokens: encode(&m.motion, codec)?,
                condition: m.class.id(),
            })
        })
        .collect()
}

pub fn edit_dataset(codec: &CodecCheckpoint, data: &[LabeledMotion]) -> Result<Vec<EditExample>, HarnessError> {
    data.iter()
        .map(|m| {
            let pair = m
                .edit
                .as_ref()
                .ok_or_else(|| HarnessError::Config("edit bundle item without an edit pair".into()))?;
            Ok(EditExample {
                source: encode(&pair.source, codec)?,
                target: encode(&pair.target, codec)?,
                label: pair.label.id(),
            })
        })
        .collect()
}

pub fn train_generator_stage(
    codec: &CodecCheckpoint,
    data: &[LabeledMotion],
    cfg: &ExperimentConfig,
    on_epoch: impl FnMut(usize, f64),
) -> Result<GeneratorCheckpoint, HarnessError> {
    let tokens = generator_dataset(codec, data)?;
    Ok(train_generator_observed(
        &tokens,
        codec.layout(),
        cfg.generator.clone(),
        &cfg.generator_train,
        cfg.seed ^ GENERATOR_STREAM,
        on_epoch,
    )?)
}

pub fn train_edit_stage(
    codec: &CodecCheckpoint,
    data: &[LabeledMotion],
    cfg: &ExperimentConfig,
) -> Result<GeneratorCheckpoint, HarnessError> {
    let examples = edit_dataset(codec, data)?;
    Ok(train_edit(
        &examples,
        codec.layout(),
        edit_config(&cfg.generator, EditLabel::ALL.len()),
        &cfg.edit_train,
        cfg.seed ^ EDIT_STREAM,
    )?)
}
