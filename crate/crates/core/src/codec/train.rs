use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::motiondata::MotionSequence;
use crate::numerics::{Adam, CosineWarmup, Graph, Tensor, Var};

use super::config::ScaleConfig;
use super::model::{codec_loss, forward, forward_prefix, CodecCheckpoint, Normalizer};
use super::CodecError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub max_lr: f64,
    pub min_lr: f64,
    pub warmup_steps: usize,
    pub alpha: f64,
    pub clip_norm: f64,
    /// Floor for per-feature standard deviations in the input normalizer.
    pub std_floor: f64,
    /// Probability that a clip is reconstructed from a random prefix of scales
    /// instead of all of them, which pushes coarse content into early scales.
    pub scale_dropout: f64,
}

impl Default for CodecTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 16,
            max_lr: 1e-4,
            min_lr: 1e-5,
            warmup_steps: 50,
            alpha: 0.1,
            clip_norm: 1.0,
            std_floor: 0.05,
            scale_dropout: 0.0,
        }
    }
}

/// Codec loss of one normalized clip as a node of `g`, with the parameters of
/// `ckpt` registered as graph parameters.
pub fn clip_loss_var<'g>(
    g: &'g Graph,
    ckpt: &CodecCheckpoint,
    x_norm: &Tensor,
    alpha: f64,
) -> Result<Var<'g>, CodecError> {
    let pass = forward(g, ckpt, x_norm)?;
    Ok(codec_loss(
        g.constant(x_norm.clone()),
        pass.reconstruction,
        &pass.latents,
        &pass.aggregates,
        alpha,
    )?)
}

/// Codec loss of one normalized clip under `ckpt`, without updating anything.
pub fn clip_loss(ckpt: &CodecCheckpoint, x_norm: &Tensor, alpha: f64) -> Result<f64, CodecError> {
    Ok(clip_loss_var(&Graph::new(), ckpt, x_norm, alpha)?.item())
}

pub fn train_codec(
    data: &[MotionSequence],
    config: ScaleConfig,
    train: &CodecTrainConfig,
    seed: u64,
) -> Result<CodecCheckpoint, CodecError> {
    train_codec_observed(data, config, train, seed, |_, _| {})
}

/// [`train_codec`] with a callback receiving `(epoch, mean loss)` after every epoch.
pub fn train_codec_observed(
    data: &[MotionSequence],
    config: ScaleConfig,
    train: &CodecTrainConfig,
    seed: u64,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<CodecCheckpoint, CodecError> {
    if data.is_empty() {
        return Err(CodecError::EmptyDataset);
    }
    if train.batch_size == 0 || train.epochs == 0 {
        return Err(CodecError::Config("epochs and batch size must be positive".into()));
    }
    if !(0.0..=1.0).contains(&train.scale_dropout) {
        return Err(CodecError::Config(format!(
            "scale dropout {} is not a probability",
            train.scale_dropout
        )));
    }
    let mut ckpt = CodecCheckpoint::init(config, seed)?;
    ckpt.normalizer = Normalizer::fit(data, train.std_floor);
    let normalized: Vec<Tensor> = data
        .iter()
        .map(|x| {
            if x.len() != ckpt.config.frames {
                return Err(CodecError::Mismatch(format!(
                    "training clip has {} frames, codec expects {}",
                    x.len(),
                    ckpt.config.frames
                )));
            }
            Ok(ckpt.normalizer.normalize(x.frames()))
        })
        .collect::<Result<_, _>>()?;
    let steps_per_epoch = data.len().div_ceil(train.batch_size);
    let schedule = CosineWarmup {
        max_lr: train.max_lr,
        min_lr: train.min_lr,
        warmup_steps: train.warmup_steps,
        total_steps: steps_per_epoch * train.epochs,
    };
    let mut adam = Adam::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0005_eedc_0dec);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut step = 0;
    for epoch in 0..train.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(train.batch_size) {
            ckpt.params.zero_grads();
            for &i in batch {
                let g = Graph::new();
                let x = &normalized[i];
                let scales = ckpt.config.scale_count();
                let kept = if train.scale_dropout > 0.0 && rng.gen_bool(train.scale_dropout) {
                    rng.gen_range(1..=scales)
                } else {
                    scales
                };
                let pass = forward_prefix(&g, &ckpt, x, kept)?;
                let loss = codec_loss(
                    g.constant(x.clone()),
                    pass.reconstruction,
                    &pass.latents,
                    &pass.aggregates,
                    train.alpha,
                )?;
                let value = loss.item();
                if !value.is_finite() {
                    return Err(CodecError::Diverged { step, loss: value });
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
                return Err(CodecError::Diverged { step, loss: f64::NAN });
            }
        }
        let mean = total / data.len() as f64;
        log::info!("codec epoch {epoch}: loss {mean:.6}");
        ckpt.meta.loss_curve.push(mean);
        on_epoch(epoch, mean);
    }
    ckpt.meta.epochs = train.epochs;
    ckpt.meta.steps = step;
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motiondata::{synth_generate, MotionClass};

    fn tiny_config() -> ScaleConfig {
        let mut c = ScaleConfig::preset(2, 16).unwrap();
        c.hidden = 8;
        c.latent_dim = 6;
        c
    }

    fn data(n: usize) -> Vec<MotionSequence> {
        (0..n as u64)
            .map(|s| synth_generate(MotionClass::ALL[s as usize % 4], 16, s).unwrap().motion)
            .collect()
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        use crate::numerics::{finite_diff_check, GradCheckOptions, NumericsError};
        let ckpt = CodecCheckpoint::init(tiny_config(), 4).unwrap();
        let x = ckpt.normalizer.normalize(data(1)[0].frames());
        let options = GradCheckOptions {
            surrogate: true,
            ..GradCheckOptions::default()
        };
        let report = finite_diff_check(&ckpt.params, options, |g, p| {
            let mut local = ckpt.clone();
            local.params = p.clone();
            clip_loss_var(g, &local, &x, 0.1).map_err(|e| NumericsError::Shape(e.to_string()))
        })
        .unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let train = CodecTrainConfig {
            epochs: 4,
            batch_size: 4,
            max_lr: 3e-3,
            min_lr: 1e-4,
            warmup_steps: 2,
            ..Default::default()
        };
        let d = data(8);
        let a = train_codec(&d, tiny_config(), &train, 9).unwrap();
        let b = train_codec(&d, tiny_config(), &train, 9).unwrap();
        assert_eq!(a.meta.loss_curve, b.meta.loss_curve);
        assert_eq!(a.params, b.params);
        let curve = &a.meta.loss_curve;
        assert!(curve.last().unwrap() < &curve[0], "{curve:?}");
    }

    #[test]
    fn scale_dropout_trains_prefixes() {
        let mut train = CodecTrainConfig {
            epochs: 2,
            batch_size: 4,
            max_lr: 3e-3,
            scale_dropout: 1.0,
            ..Default::default()
        };
        let d = data(8);
        let a = train_codec(&d, tiny_config(), &train, 3).unwrap();
        let plain = train_codec(
            &d,
            tiny_config(),
            &CodecTrainConfig {
                scale_dropout: 0.0,
                ..train.clone()
            },
            3,
        )
        .unwrap();
        assert_eq!(a.params, train_codec(&d, tiny_config(), &train, 3).unwrap().params);
        assert_ne!(a.params, plain.params);
        train.scale_dropout = 1.5;
        assert!(matches!(
            train_codec(&d, tiny_config(), &train, 3),
            Err(CodecError::Config(_))
        ));
    }

    #[test]
    fn rejects_empty_dataset() {
        assert!(matches!(
            train_codec(&[], tiny_config(), &CodecTrainConfig::default(), 0),
            Err(CodecError::EmptyDataset)
        ));
    }
}
