use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codec::TokenSequence;
use crate::numerics::softmax_prefix;

use super::model::{argmax, forward, GeneratorCheckpoint, CONDITION_LEN};
use super::schedule::remask_count;
use super::GeneratorError;

pub const DEFAULT_ITERATIONS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleOptions {
    pub iterations: usize,
    /// Take the most likely token instead of drawing from the categorical.
    pub greedy: bool,
}

impl Default for SampleOptions {
    fn default() -> Self {
        Self {
            iterations: DEFAULT_ITERATIONS,
            greedy: false,
        }
    }
}

fn draw(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding can leave the cumulative sum just under one.
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

/// Iterative confidence-based decoding. `initial` marks fixed context with
/// `Some`; those positions are never changed. A fully masked start is used when
/// `initial` is `None`.
pub fn sample(
    ckpt: &GeneratorCheckpoint,
    condition: usize,
    initial: Option<&[Option<u32>]>,
    options: SampleOptions,
    rng: &mut impl Rng,
) -> Result<TokenSequence, GeneratorError> {
    if options.iterations == 0 {
        return Err(GeneratorError::Iteration { k: 0, iterations: 0 });
    }
    let mut tokens: Vec<Option<u32>> = match initial {
        Some(t) => t.to_vec(),
        None => vec![None; ckpt.layout.total()],
    };
    ckpt.check_condition(condition)?;
    ckpt.check_tokens(&tokens)?;
    let initially_masked = tokens.iter().filter(|t| t.is_none()).count();
    for k in 1..=options.iterations {
        let masked: Vec<usize> = (0..tokens.len()).filter(|&i| tokens[i].is_none()).collect();
        if masked.is_empty() {
            break;
        }
        let logits = forward(ckpt, condition, &tokens)?.values;
        let mut confidence = Vec::with_capacity(masked.len());
        for &pos in &masked {
            let (s, _) = ckpt.layout.locate(pos).expect("inside layout");
            let probs = softmax_prefix(logits.row(CONDITION_LEN + pos), ckpt.layout.vocab[s]);
            let choice = if options.greedy {
                argmax(&probs)
            } else {
                draw(&probs, rng)
            };
            tokens[pos] = Some(choice as u32);
            confidence.push((probs[choice], pos));
        }
        let remask = remask_count(k, options.iterations, initially_masked)?.min(confidence.len());
        confidence.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, pos) in &confidence[..remask] {
            tokens[pos] = None;
        }
    }
    let flat: Vec<u32> = tokens
        .iter()
        .map(|t| t.ok_or(GeneratorError::Unconverged))
        .collect::<Result<_, _>>()?;
    Ok(TokenSequence::from_flat(&ckpt.layout, &flat)?)
}
