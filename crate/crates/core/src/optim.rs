//! Optimizers and the triangular cyclic learning-rate schedule.

use crate::backbone::ParameterSet;

/// Decoupled-weight-decay Adam configuration.
#[derive(Debug, Clone)]
pub struct AdamWConfig {
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamWConfig {
    /// Plain Adam: no decoupled decay term.
    pub fn without_decay() -> Self {
        AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        }
    }
}

/// Adam with decoupled weight decay. Moment buffers are allocated lazily on
/// the first step and keyed by parameter order, so one instance must stay
/// paired with one [`ParameterSet`].
#[derive(Debug)]
pub struct AdamW {
    cfg: AdamWConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig) -> Self {
        AdamW {
            cfg,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    /// One update from the gradients currently accumulated on `params`.
    pub fn step(&mut self, params: &mut ParameterSet, lr: f64) {
        if self.m.is_empty() {
            for t in params.tensors() {
                self.m.push(vec![0.0; t.numel()]);
                self.v.push(vec![0.0; t.numel()]);
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.cfg.beta2.powi(self.t as i32);
        for (idx, tensor) in params.tensors_mut().enumerate() {
            let grad = tensor
                .grad
                .clone()
                .unwrap_or_else(|| vec![0.0; tensor.numel()]);
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            for (i, value) in tensor.values_mut().iter_mut().enumerate() {
                let g = grad[i];
                m[i] = self.cfg.beta1 * m[i] + (1.0 - self.cfg.beta1) * g;
                v[i] = self.cfg.beta2 * v[i] + (1.0 - self.cfg.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *value -= lr * (m_hat / (v_hat.sqrt() + self.cfg.eps) + self.cfg.weight_decay * *value);
            }
        }
    }
}

/// In-place SGD update: `values -= alpha * grad`.
pub fn sgd_update(values: &mut [f64], grad: &[f64], alpha: f64) {
    for (v, g) in values.iter_mut().zip(grad) {
        *v -= alpha * g;
    }
}

/// Triangular cyclic learning-rate schedule over iteration indices.
#[derive(Debug, Clone)]
pub struct CyclicLr {
    pub base_lr: f64,
    pub max_lr: f64,
    /// Iterations in one half-cycle (rise or fall).
    pub step_size: usize,
}

/// Epoch-level schedule settings; trainers convert to iterations once the
/// number of optimizer steps per epoch is known.
#[derive(Debug, Clone)]
pub struct CyclicLrConfig {
    pub base_lr: f64,
    pub max_lr: f64,
    pub step_size_epochs: usize,
}

impl Default for CyclicLrConfig {
    fn default() -> Self {
        CyclicLrConfig {
            base_lr: 1e-6,
            max_lr: 1e-3,
            step_size_epochs: 8,
        }
    }
}

impl CyclicLrConfig {
    pub fn at_steps_per_epoch(&self, steps_per_epoch: usize) -> CyclicLr {
        CyclicLr {
            base_lr: self.base_lr,
            max_lr: self.max_lr,
            step_size: (self.step_size_epochs * steps_per_epoch).max(1),
        }
    }
}

/// Piecewise-linear triangle wave: the rate rises from `base_lr` to `max_lr`
/// over one half-cycle, falls back over the next, and repeats. Cycle
/// boundaries sit exactly at `base_lr`.
pub fn cyclic_lr(iteration: usize, schedule: &CyclicLr) -> f64 {
    let period = 2 * schedule.step_size;
    let pos = iteration % period;
    let frac = if pos < schedule.step_size {
        pos as f64 / schedule.step_size as f64
    } else {
        (period - pos) as f64 / schedule.step_size as f64
    };
    schedule.base_lr + (schedule.max_lr - schedule.base_lr) * frac
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{BackboneConfig, ParameterSet};

    fn schedule() -> CyclicLr {
        CyclicLr {
            base_lr: 1e-6,
            max_lr: 1e-3,
            step_size: 800,
        }
    }

    #[test]
    fn cyclic_lr_starts_at_base() {
        assert_eq!(cyclic_lr(0, &schedule()), 1e-6);
    }

    #[test]
    fn cyclic_lr_midpoint_of_rise() {
        let lr = cyclic_lr(400, &schedule());
        assert!((lr - 5.005e-4).abs() < 1e-15, "{lr}");
    }

    #[test]
    fn cyclic_lr_peak_and_full_cycle() {
        assert_eq!(cyclic_lr(800, &schedule()), 1e-3);
        assert_eq!(cyclic_lr(1600, &schedule()), 1e-6);
        assert_eq!(cyclic_lr(3200, &schedule()), 1e-6);
    }

    fn tiny_params() -> ParameterSet {
        ParameterSet::init_xavier(&BackboneConfig {
            input_dim: 3,
            hidden_dims: vec![4],
            output_dim: 2,
            seed: 1,
        })
        .unwrap()
    }

    #[test]
    fn adamw_zero_grads_without_decay_is_identity() {
        let mut params = tiny_params();
        params.zero_grads();
        let before: Vec<f64> = params.tensors().flat_map(|t| t.values().to_vec()).collect();
        let mut opt = AdamW::new(AdamWConfig::without_decay());
        opt.step(&mut params, 1e-3);
        let after: Vec<f64> = params.tensors().flat_map(|t| t.values().to_vec()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn adamw_descends_along_gradient() {
        let mut params = tiny_params();
        params.zero_grads();
        for t in params.tensors_mut() {
            let n = t.numel();
            t.grad = Some(vec![1.0; n]);
        }
        let before: Vec<f64> = params.tensors().flat_map(|t| t.values().to_vec()).collect();
        let mut opt = AdamW::new(AdamWConfig::without_decay());
        opt.step(&mut params, 1e-2);
        let after: Vec<f64> = params.tensors().flat_map(|t| t.values().to_vec()).collect();
        for (b, a) in before.iter().zip(&after) {
            assert!(a < b, "positive gradient must lower the value");
        }
    }

    #[test]
    fn sgd_update_exact() {
        let mut values = vec![1.0, -2.0];
        sgd_update(&mut values, &[0.5, 0.5], 0.1);
        assert_eq!(values, vec![0.95, -2.05]);
    }
}
