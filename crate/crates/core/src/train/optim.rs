//! Adam with L2 weight decay folded into the gradient.

use serde::{Deserialize, Serialize};

use crate::params::{quantize_f32, ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, weight_decay: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates of one parameter tensor.
#[derive(Clone, Debug, Default)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    moments: Vec<Moments>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam { config, step: 0, moments: Vec::new() }
    }

    /// Number of completed steps.
    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Bias-corrected update of `value` in place from `grad`.
    fn update(&self, moments: &mut Moments, value: &mut [f64], grad: &[f64]) {
        let c = self.config;
        if moments.m.is_empty() {
            moments.m = vec![0.0; value.len()];
            moments.v = vec![0.0; value.len()];
        }
        let t = self.step as i32;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        for i in 0..value.len() {
            let g = grad[i] + c.weight_decay * value[i];
            moments.m[i] = c.beta1 * moments.m[i] + (1.0 - c.beta1) * g;
            moments.v[i] = c.beta2 * moments.v[i] + (1.0 - c.beta2) * g * g;
            let m_hat = moments.m[i] / bias1;
            let v_hat = moments.v[i] / bias2;
            value[i] -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
        }
    }

    /// Apply one step to every parameter listed in `grads`. Parameters
    /// absent from `grads` keep their values and moments.
    pub fn step<'g>(&mut self, store: &mut ParamStore, grads: impl IntoIterator<Item = (ParamId, &'g [f64])>) {
        self.step += 1;
        if self.moments.len() < store.len() {
            self.moments.resize_with(store.len(), Moments::default);
        }
        for (id, grad) in grads {
            let mut moments = std::mem::take(&mut self.moments[id.index()]);
            let values = store.values_mut(id);
            assert_eq!(values.len(), grad.len(), "gradient length for parameter {id:?}");
            self.update(&mut moments, values, grad);
            quantize_f32(values);
            self.moments[id.index()] = moments;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Shape, Tensor};

    fn scalar_store(v: f64) -> (ParamStore, ParamId) {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(v), true).unwrap();
        (store, id)
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let (mut store, id) = scalar_store(0.75);
        let mut adam = Adam::new(AdamConfig { weight_decay: 0.0, ..AdamConfig::default() });
        for _ in 0..5 {
            adam.step(&mut store, [(id, &[0.0][..])]);
        }
        assert_eq!(store.get(id).tensor.data()[0], 0.75);
    }

    #[test]
    fn first_step_matches_hand_computation() {
        let (mut store, id) = scalar_store(0.5);
        let cfg = AdamConfig { weight_decay: 0.0, ..AdamConfig::default() };
        let mut adam = Adam::new(cfg);
        adam.step(&mut store, [(id, &[1.0][..])]);
        // m = 0.1, v = 0.001; bias-corrected both are 1 -> update lr / (1 + eps)
        let want = 0.5 - cfg.lr / (1.0 + cfg.eps);
        assert!((store.get(id).tensor.data()[0] - want as f32 as f64).abs() < 1e-12);
    }

    #[test]
    fn decay_shrinks_magnitude() {
        for start in [0.8, -0.8] {
            let (mut store, id) = scalar_store(start);
            let mut adam = Adam::new(AdamConfig::default());
            let mut prev = start.abs();
            for _ in 0..10 {
                adam.step(&mut store, [(id, &[0.0][..])]);
                let now = store.get(id).tensor.data()[0].abs();
                assert!(now < prev);
                prev = now;
            }
        }
    }

    #[test]
    fn deterministic_over_repeats() {
        let run = || {
            let mut store = ParamStore::new();
            let id = store.add("w", Tensor::from_fn(Shape::new(1, 1, 1, 4), |i| i as f64 * 0.1), true).unwrap();
            let mut adam = Adam::new(AdamConfig::default());
            for k in 0..20 {
                let g: Vec<f64> = (0..4).map(|i| ((i + k) as f64).sin()).collect();
                adam.step(&mut store, [(id, g.as_slice())]);
            }
            store.get(id).tensor.clone()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn matches_multi_step_reference() {
        // independent scalar recurrence written out directly
        let (mut store, id) = scalar_store(0.3);
        let cfg = AdamConfig::default();
        let mut adam = Adam::new(cfg);
        let (mut x, mut m, mut v) = (0.3f32 as f64, 0.0, 0.0);
        for t in 1..=6 {
            let grad = 0.2 * t as f64 - 0.5;
            adam.step(&mut store, [(id, &[grad][..])]);
            let g = grad + cfg.weight_decay * x;
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            let mh = m / (1.0 - cfg.beta1.powi(t));
            let vh = v / (1.0 - cfg.beta2.powi(t));
            x = (x - cfg.lr * mh / (vh.sqrt() + cfg.eps)) as f32 as f64;
            assert_eq!(store.get(id).tensor.data()[0], x);
        }
    }
}
