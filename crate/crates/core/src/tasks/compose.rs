use crate::codec::TokenSequence;

use super::TaskError;

fn check_pair(y1: &TokenSequence, y2: &TokenSequence) -> Result<(), TaskError> {
    if y1.lengths() != y2.lengths() {
        return Err(TaskError::Config(format!(
            "token layouts differ: {:?} vs {:?}",
            y1.lengths(),
            y2.lengths()
        )));
    }
    Ok(())
}

/// Tokens of `y1` before the time `fraction` and of `y2` after it, cut at the
/// same fraction on every scale (`floor(fraction n_s)` tokens from `y1`).
/// `fraction = 0` yields `y2` and `fraction = 1` yields `y1`.
pub fn compose_temporal(y1: &TokenSequence, y2: &TokenSequence, fraction: f64) -> Result<TokenSequence, TaskError> {
    check_pair(y1, y2)?;
    if !(0.0..=1.0).contains(&fraction) {
        return Err(TaskError::Config(format!("fraction {fraction} outside [0, 1]")));
    }
    let scales = y1
        .scales()
        .iter()
        .zip(y2.scales())
        .map(|(a, b)| {
            let cut = ((fraction * a.len() as f64 + 1e-9).floor() as usize).min(a.len());
            a[..cut].iter().chain(&b[cut..]).copied().collect()
        })
        .collect();
    Ok(TokenSequence::new(scales))
}

/// Scales `1..=s_split` from `y1`, the rest from `y2`.
pub fn compose_spatial(y1: &TokenSequence, y2: &TokenSequence, s_split: usize) -> Result<TokenSequence, TaskError> {
    check_pair(y1, y2)?;
    let count = y1.scale_count();
    if s_split == 0 || s_split >= count {
        return Err(TaskError::Config(format!("split scale {s_split} outside 1..{count}")));
    }
    let scales = (0..count)
        .map(|s| if s < s_split { y1.scale(s) } else { y2.scale(s) }.to_vec())
        .collect();
    Ok(TokenSequence::new(scales))
}
