use crate::codec::{TokenLayout, TokenSequence};

use super::model::{argmax, forward, GeneratorCheckpoint, GeneratorConfig, CONDITION_LEN};
use super::train::{optimise, Example, GeneratorTrainConfig};
use super::GeneratorError;

#[derive(Clone, Debug, PartialEq)]
pub struct EditExample {
    pub source: TokenSequence,
    pub target: TokenSequence,
    pub label: usize,
}

/// Network shape for editing: one condition per edit label, no null label.
pub fn edit_config(base: &GeneratorConfig, labels: usize) -> GeneratorConfig {
    GeneratorConfig {
        conditions: labels,
        null_condition: None,
        ..base.clone()
    }
}

/// Trains the generator to map source tokens plus an edit label to target tokens
/// in one pass. Every position is supervised.
pub fn train_edit(
    data: &[EditExample],
    layout: TokenLayout,
    config: GeneratorConfig,
    train: &GeneratorTrainConfig,
    seed: u64,
) -> Result<GeneratorCheckpoint, GeneratorError> {
    let mut ckpt = GeneratorCheckpoint::init(config, layout, seed)?;
    for ex in data {
        ex.source.validate(&ckpt.layout)?;
        ex.target.validate(&ckpt.layout)?;
        ckpt.check_condition(ex.label)?;
    }
    let all: Vec<usize> = (0..ckpt.layout.total()).collect();
    optimise(
        &mut ckpt,
        data.len(),
        train,
        seed,
        |i, _| {
            Ok(Example {
                condition: data[i].label,
                input: data[i].source.flat().into_iter().map(Some).collect(),
                targets: data[i].target.flat(),
                supervised: all.clone(),
            })
        },
        |_, _| {},
    )?;
    Ok(ckpt)
}

/// Predicts every target token in a single forward pass. Positions flagged in
/// `mask` are hidden from the model.
pub fn edit_tokens(
    ckpt: &GeneratorCheckpoint,
    source: &TokenSequence,
    label: usize,
    mask: Option<&[bool]>,
) -> Result<TokenSequence, GeneratorError> {
    source.validate(&ckpt.layout)?;
    let mut input: Vec<Option<u32>> = source.flat().into_iter().map(Some).collect();
    if let Some(mask) = mask {
        if mask.len() != input.len() {
            return Err(GeneratorError::Layout(format!(
                "mask covers {} of {} positions",
                mask.len(),
                input.len()
            )));
        }
        for (t, &m) in input.iter_mut().zip(mask) {
            if m {
                *t = None;
            }
        }
    }
    let logits = forward(ckpt, label, &input)?.values;
    let flat: Vec<u32> = (0..input.len())
        .map(|p| {
            let (s, _) = ckpt.layout.locate(p).expect("inside layout");
            argmax(&logits.row(CONDITION_LEN + p)[..ckpt.layout.vocab[s]]) as u32
        })
        .collect();
    Ok(TokenSequence::from_flat(&ckpt.layout, &flat)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn learns_a_token_mapping_and_runs_one_pass() {
        let layout = TokenLayout::new(vec![3], vec![5]).unwrap();
        // Label 0 copies, label 1 shifts every token by one.
        let mut data = Vec::new();
        for a in 0..4u32 {
            for b in 0..4u32 {
                let source = TokenSequence::new(vec![vec![a, b, (a + b) % 4]]);
                let shifted = TokenSequence::new(vec![source.scale(0).iter().map(|t| t + 1).collect()]);
                data.push(EditExample {
                    source: source.clone(),
                    target: source.clone(),
                    label: 0,
                });
                data.push(EditExample {
                    source,
                    target: shifted,
                    label: 1,
                });
            }
        }
        let config = GeneratorConfig {
            width: 16,
            heads: 2,
            blocks: 1,
            ffn: 32,
            conditions: 2,
            null_condition: None,
        };
        let train = GeneratorTrainConfig {
            epochs: 30,
            batch_size: 8,
            max_lr: 1e-2,
            min_lr: 1e-3,
            warmup_steps: 4,
            ..Default::default()
        };
        let ckpt = train_edit(&data, layout, config, &train, 1).unwrap();
        let before = ckpt.forward_calls();
        let mut correct = 0;
        for ex in &data {
            correct += usize::from(edit_tokens(&ckpt, &ex.source, ex.label, None).unwrap() == ex.target);
        }
        assert_eq!(ckpt.forward_calls() - before, data.len());
        assert!(correct as f64 >= 0.9 * data.len() as f64, "{correct}/{}", data.len());
        assert!(edit_tokens(&ckpt, &data[0].source, 2, None).is_err());
        assert!(edit_tokens(&ckpt, &data[0].source, 0, Some(&[true])).is_err());
    }
}
