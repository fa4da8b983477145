use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{TokenLayout, TokenSequence};
use crate::numerics::{Adam, CosineWarmup, Graph};

use super::model::{forward_graph, nll_graph, GeneratorCheckpoint, GeneratorConfig};
use super::schedule::mask_tokens;
use super::GeneratorError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub max_lr: f64,
    pub min_lr: f64,
    pub warmup_steps: usize,
    pub clip_norm: f64,
    /// Probability of replacing the condition with the null label.
    pub condition_dropout: f64,
}

impl Default for GeneratorTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 16,
            max_lr: 1e-4,
            min_lr: 1e-5,
            warmup_steps: 50,
            clip_norm: 1.0,
            condition_dropout: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionedTokens {
    pub tokens: TokenSequence,
    pub condition: usize,
}

/// One training example after masking: what the model sees and what it must predict.
pub(crate) struct Example {
    pub condition: usize,
    pub input: Vec<Option<u32>>,
    pub targets: Vec<u32>,
    pub supervised: Vec<usize>,
}

/// Shared optimisation loop. `make` turns dataset item `i` into an example.
pub(crate) fn optimise(
    ckpt: &mut GeneratorCheckpoint,
    len: usize,
    train: &GeneratorTrainConfig,
    seed: u64,
    mut make: impl FnMut(usize, &mut ChaCha8Rng) -> Result<Example, GeneratorError>,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<(), GeneratorError> {
    if len == 0 {
        return Err(GeneratorError::EmptyDataset);
    }
    if train.batch_size == 0 || train.epochs == 0 {
        return Err(GeneratorError::Config("epochs and batch size must be positive".into()));
    }
    let steps_per_epoch = len.div_ceil(train.batch_size);
    let schedule = CosineWarmup {
        max_lr: train.max_lr,
        min_lr: train.min_lr,
        warmup_steps: train.warmup_steps,
        total_steps: steps_per_epoch * train.epochs,
    };
    let mut adam = Adam::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6e6e_0bad);
    let mut order: Vec<usize> = (0..len).collect();
    let mut step = 0;
    for epoch in 0..train.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(train.batch_size) {
            ckpt.params.zero_grads();
            for &i in batch {
                let ex = make(i, &mut rng)?;
                let g = Graph::new();
                let out = forward_graph(&g, ckpt, ex.condition, &ex.input, false)?;
                let loss = nll_graph(ckpt, &out.per_scale, &ex.targets, &ex.supervised)?;
                let value = loss.item();
                if !value.is_finite() {
                    return Err(GeneratorError::Diverged { step, loss: value });
                }
                total += value;
                let grads = g.backward(loss)?;
                ckpt.params.accumulate(&grads, 1.0 / batch.len() as f64)?;
            }
            if train.clip_norm > 0.0 {
                ckpt.params.clip_grad_norm(train.clip_norm);
            }
            adam.step(&mut ckpt.params, schedule.lr(step));
            step += 1;
            if !ckpt.params.all_finite() {
                return Err(GeneratorError::Diverged { step, loss: f64::NAN });
            }
        }
        let mean = total / len as f64;
        log::info!("generator epoch {epoch}: loss {mean:.5}");
        ckpt.meta.loss_curve.push(mean);
        on_epoch(epoch, mean);
    }
    ckpt.meta.epochs += train.epochs;
    ckpt.meta.steps += step;
    Ok(())
}

pub fn train_generator(
    data: &[ConditionedTokens],
    layout: TokenLayout,
    config: GeneratorConfig,
    train: &GeneratorTrainConfig,
    seed: u64,
) -> Result<GeneratorCheckpoint, GeneratorError> {
    train_generator_observed(data, layout, config, train, seed, |_, _| {})
}

/// [`train_generator`] with a callback receiving `(epoch, mean loss)`.
pub fn train_generator_observed(
    data: &[ConditionedTokens],
    layout: TokenLayout,
    config: GeneratorConfig,
    train: &GeneratorTrainConfig,
    seed: u64,
    on_epoch: impl FnMut(usize, f64),
) -> Result<GeneratorCheckpoint, GeneratorError> {
    let mut ckpt = GeneratorCheckpoint::init(config, layout, seed)?;
    for item in data {
        item.tokens.validate(&ckpt.layout)?;
        ckpt.check_condition(item.condition)?;
    }
    let null = ckpt.config.null_condition;
    optimise(
        &mut ckpt,
        data.len(),
        train,
        seed,
        |i, rng| {
            let targets = data[i].tokens.flat();
            let tau: f64 = rng.gen_range(0.0..1.0);
            let (input, supervised) = mask_tokens(&targets, tau, rng)?;
            let condition = match null {
                Some(null) if rng.gen::<f64>() < train.condition_dropout => null,
                _ => data[i].condition,
            };
            Ok(Example {
                condition,
                input,
                targets,
                supervised,
            })
        },
        on_epoch,
    )?;
    Ok(ckpt)
}
