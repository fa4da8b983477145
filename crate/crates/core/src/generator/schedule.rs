use std::f64::consts::FRAC_PI_2;

use rand::seq::index::sample;
use rand::Rng;

use super::GeneratorError;

/// Guards `ceil` against products that land a rounding error above an integer.
const CEIL_SLACK: f64 = 1e-9;

/// Cosine masking schedule `cos(pi tau / 2)` on `[0, 1)`.
pub fn gamma(tau: f64) -> Result<f64, GeneratorError> {
    if !(0.0..1.0).contains(&tau) {
        return Err(GeneratorError::ScheduleDomain(tau));
    }
    Ok((FRAC_PI_2 * tau).cos())
}

/// `ceil(gamma(tau) n)`, at least one position.
pub fn mask_count(tau: f64, n: usize) -> Result<usize, GeneratorError> {
    let exact = gamma(tau)? * n as f64;
    Ok(((exact - CEIL_SLACK).ceil() as usize).clamp(1.min(n), n))
}

/// Masks `ceil(gamma(tau) n)` distinct positions chosen uniformly without replacement.
/// Returns the masked sequence (`None` marks a mask) and the positions in ascending order.
pub fn mask_tokens(y: &[u32], tau: f64, rng: &mut impl Rng) -> Result<(Vec<Option<u32>>, Vec<usize>), GeneratorError> {
    let count = mask_count(tau, y.len())?;
    let mut positions = sample(rng, y.len(), count).into_vec();
    positions.sort_unstable();
    let mut masked: Vec<Option<u32>> = y.iter().copied().map(Some).collect();
    for &p in &positions {
        masked[p] = None;
    }
    Ok((masked, positions))
}

/// Tokens re-masked after iteration `k` of `iterations`: `ceil(cos(pi k / 2K) n)`,
/// and exactly zero after the last iteration.
pub fn remask_count(k: usize, iterations: usize, n: usize) -> Result<usize, GeneratorError> {
    if iterations == 0 || k == 0 || k > iterations {
        return Err(GeneratorError::Iteration { k, iterations });
    }
    if k == iterations {
        return Ok(0);
    }
    let exact = (FRAC_PI_2 * k as f64 / iterations as f64).cos() * n as f64;
    Ok(((exact - CEIL_SLACK).ceil().max(0.0) as usize).min(n))
}
