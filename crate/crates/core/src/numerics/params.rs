use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Gradients, NumericsError, Tensor};

/// Named parameters, each with a gradient slot of the same shape.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    values: BTreeMap<String, Tensor>,
    grads: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<(), NumericsError> {
        if self.values.contains_key(name) {
            return Err(NumericsError::DuplicateParam(name.to_string()));
        }
        self.grads.insert(name.to_string(), Tensor::zeros(value.shape()));
        self.values.insert(name.to_string(), value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.values.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.values.get_mut(name)
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor> {
        self.grads.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.values.values().map(Tensor::len).sum()
    }

    pub fn zero_grads(&mut self) {
        for g in self.grads.values_mut() {
            g.data_mut().fill(0.0);
        }
    }

    /// Adds `scale * grads` into the gradient slots of every parameter the
    /// graph bound. Call in a fixed order across workers for reproducible sums.
    pub fn accumulate(&mut self, grads: &Gradients, scale: f64) -> Result<(), NumericsError> {
        for name in grads.param_names() {
            let g = grads.param(name).expect("bound parameter");
            let slot = self
                .grads
                .get_mut(name)
                .ok_or_else(|| NumericsError::MissingParam(name.to_string()))?;
            slot.add_scaled(&g, scale)?;
        }
        Ok(())
    }

    pub fn grad_norm(&self) -> f64 {
        self.grads
            .values()
            .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Scales all gradients so their global norm is at most `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for g in self.grads.values_mut() {
                g.data_mut().iter_mut().for_each(|v| *v *= s);
            }
        }
        norm
    }

    pub fn all_finite(&self) -> bool {
        self.values.values().all(Tensor::is_finite)
    }
}

/// Gaussian initialisation with the given standard deviation.
pub fn init_normal(rng: &mut impl Rng, shape: &[usize], std: f64) -> Tensor {
    let normal = Normal::new(0.0, std).expect("positive std");
    let len = shape.iter().product();
    let data = (0..len).map(|_| normal.sample(rng)).collect();
    Tensor::new(shape, data).expect("shape matches data")
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }
}

impl Adam {
    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamSet, lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (name, value) in params.values.iter_mut() {
            let grad = params.grads[name].data();
            let m = self.first.entry(name.clone()).or_insert_with(|| vec![0.0; grad.len()]);
            let v = self.second.entry(name.clone()).or_insert_with(|| vec![0.0; grad.len()]);
            for (i, p) in value.data_mut().iter_mut().enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * grad[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                *p -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Linear warmup to `max_lr`, then cosine annealing down to `min_lr`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CosineWarmup {
    pub max_lr: f64,
    pub min_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl CosineWarmup {
    pub fn lr(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.max_lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps.saturating_sub(self.warmup_steps).max(1);
        let progress = ((step - self.warmup_steps) as f64 / span as f64).min(1.0);
        self.min_lr + 0.5 * (self.max_lr - self.min_lr) * (1.0 + (PI * progress).cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut ps = ParamSet::new();
        ps.insert("w", Tensor::zeros(&[2])).unwrap();
        assert!(matches!(
            ps.insert("w", Tensor::zeros(&[2])),
            Err(NumericsError::DuplicateParam(_))
        ));
        assert_eq!(ps.grad("w").unwrap().shape(), &[2]);
    }

    #[test]
    fn schedule_endpoints() {
        let s = CosineWarmup {
            max_lr: 1e-4,
            min_lr: 1e-5,
            warmup_steps: 10,
            total_steps: 110,
        };
        assert!((s.lr(9) - 1e-4).abs() < 1e-18);
        assert!((s.lr(10) - 1e-4).abs() < 1e-18);
        assert!((s.lr(110) - 1e-5).abs() < 1e-18);
        assert!(s.lr(60) < 1e-4 && s.lr(60) > 1e-5);
        assert!(s.lr(0) > 0.0);
    }

    #[test]
    fn adam_moves_against_gradient() {
        let mut ps = ParamSet::new();
        ps.insert("w", Tensor::new(&[2], vec![1.0, -1.0]).unwrap()).unwrap();
        ps.grads.get_mut("w").unwrap().data_mut().copy_from_slice(&[0.5, -0.5]);
        let mut adam = Adam::default();
        adam.step(&mut ps, 0.1);
        let w = ps.get("w").unwrap().data();
        assert!((w[0] - 0.9).abs() < 1e-6 && (w[1] + 0.9).abs() < 1e-6);
    }
}
