//! Bidirectional masked-token transformer over flattened multi-scale token
//! sequences, with cosine mask scheduling and iterative confidence decoding.

mod edit;
mod model;
mod sample;
mod schedule;
mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use edit::{edit_config, edit_tokens, train_edit, EditExample};
pub use model::{
    forward, masked_accuracy, nll_loss, GeneratorCheckpoint, GeneratorConfig, GeneratorTrainingMeta, Logits,
    CONDITION_LEN,
};
pub use sample::{sample, SampleOptions, DEFAULT_ITERATIONS};
pub use schedule::{gamma, mask_count, mask_tokens, remask_count};
pub use train::{train_generator, train_generator_observed, ConditionedTokens, GeneratorTrainConfig};

use crate::codec::{CodecError, TokenLayout};
use crate::numerics::{read_container, write_container, ContainerError, NumericsError};

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("schedule position {0} outside [0, 1)")]
    ScheduleDomain(f64),
    #[error("iteration {k} outside 1..={iterations}")]
    Iteration { k: usize, iterations: usize },
    #[error("layout mismatch: {0}")]
    Layout(String),
    #[error("condition {condition} outside 0..{count}")]
    UnknownCondition { condition: usize, count: usize },
    #[error("sampling left masked positions")]
    Unconverged,
    #[error("empty training set")]
    EmptyDataset,
    #[error("training diverged at step {step} (loss {loss})")]
    Diverged { step: usize, loss: f64 },
    #[error("checkpoint is not a generator: {0}")]
    WrongCheckpoint(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Container(#[from] ContainerError),
}

pub const GENERATOR_KIND: &str = "generator";

#[derive(Serialize, Deserialize)]
struct GeneratorMetadata {
    kind: String,
    config: GeneratorConfig,
    lengths: Vec<usize>,
    vocab: Vec<usize>,
    meta: GeneratorTrainingMeta,
}

pub fn save_generator(path: impl AsRef<Path>, ckpt: &GeneratorCheckpoint) -> Result<(), GeneratorError> {
    let meta = GeneratorMetadata {
        kind: GENERATOR_KIND.into(),
        config: ckpt.config.clone(),
        lengths: ckpt.layout.lengths.clone(),
        vocab: ckpt.layout.vocab.clone(),
        meta: ckpt.meta.clone(),
    };
    let json = serde_json::to_string(&meta).map_err(|e| GeneratorError::Config(e.to_string()))?;
    Ok(write_container(path, &json, &ckpt.params)?)
}

pub fn load_generator(path: impl AsRef<Path>) -> Result<GeneratorCheckpoint, GeneratorError> {
    let (json, params) = read_container(path)?;
    let meta: GeneratorMetadata =
        serde_json::from_str(&json).map_err(|e| GeneratorError::WrongCheckpoint(e.to_string()))?;
    if meta.kind != GENERATOR_KIND {
        return Err(GeneratorError::WrongCheckpoint(format!(
            "found a `{}` checkpoint",
            meta.kind
        )));
    }
    let layout = TokenLayout::new(meta.lengths, meta.vocab)?;
    let mut ckpt = GeneratorCheckpoint::init(meta.config, layout, 0)?;
    for (name, t) in ckpt.params.iter() {
        match params.get(name) {
            Some(p) if p.shape() == t.shape() => {}
            _ => {
                return Err(GeneratorError::WrongCheckpoint(format!(
                    "parameter `{name}` missing or misshapen"
                )))
            }
        }
    }
    if params.len() != ckpt.params.len() {
        return Err(GeneratorError::WrongCheckpoint("unexpected extra parameters".into()));
    }
    ckpt.params = params;
    ckpt.meta = meta.meta;
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_file_round_trip() {
        let layout = TokenLayout::new(vec![2, 3], vec![5, 7]).unwrap();
        let config = GeneratorConfig {
            width: 8,
            heads: 2,
            blocks: 1,
            ffn: 12,
            conditions: 3,
            null_condition: Some(2),
        };
        let ckpt = GeneratorCheckpoint::init(config, layout, 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.msqp");
        save_generator(&path, &ckpt).unwrap();
        let back = load_generator(&path).unwrap();
        assert_eq!(back, ckpt);
    }
}
