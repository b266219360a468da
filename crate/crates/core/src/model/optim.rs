use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::model::params::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 3e-5,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments, one tensor per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// One AdamW update: decoupled decay, then the bias-corrected moment step.
pub fn optimizer_step(params: &mut ModelParams, grads: &[Tensor], state: &mut AdamState, cfg: &AdamWConfig) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let decay = 1.0 - cfg.lr * cfg.weight_decay;
    for (((p, g), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        for i in 0..p.data.len() {
            let gi = g.data[i];
            m.data[i] = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * gi;
            v.data[i] = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = m.data[i] / c1;
            let v_hat = v.data[i] / c2;
            p.data[i] = p.data[i] * decay - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::ModelConfig;

    fn small() -> ModelParams {
        let c = ModelConfig {
            vocab_size: 5,
            max_len: 4,
            d_model: 4,
            n_layers: 1,
            n_heads: 1,
            d_ff: 4,
        };
        ModelParams::init(c, 1).unwrap()
    }

    fn zero_grads(p: &ModelParams) -> Vec<Tensor> {
        p.tensors().iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect()
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut p = small();
        let before = p.clone();
        let mut s = AdamState::new(&p);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            lr: 0.1,
            ..Default::default()
        };
        optimizer_step(&mut p, &zero_grads(&before), &mut s, &cfg);
        assert_eq!(p, before);
    }

    #[test]
    fn zero_gradient_with_decay_shrinks() {
        let mut p = small();
        let before = p.clone();
        let mut s = AdamState::new(&p);
        let cfg = AdamWConfig {
            weight_decay: 0.5,
            lr: 0.1,
            ..Default::default()
        };
        optimizer_step(&mut p, &zero_grads(&before), &mut s, &cfg);
        for (a, b) in p.tensors().iter().zip(before.tensors()) {
            for (x, y) in a.data.iter().zip(&b.data) {
                assert_eq!(*x, y * (1.0 - 0.1 * 0.5));
            }
        }
    }

    #[test]
    fn first_step_matches_scalar_recomputation() {
        let mut p = small();
        let before = p.clone();
        let mut s = AdamState::new(&p);
        let cfg = AdamWConfig {
            lr: 0.01,
            weight_decay: 0.0,
            ..Default::default()
        };
        let g = 0.25;
        let grads: Vec<Tensor> = p.tensors().iter().map(|t| Tensor::filled(t.rows, t.cols, g)).collect();
        optimizer_step(&mut p, &grads, &mut s, &cfg);
        // m̂ = g and v̂ = g² after one step.
        let expected_delta = -0.01 * g / (g + 1e-8);
        let (x, y) = (p.w_ha.data[0], before.w_ha.data[0]);
        assert!((x - y - expected_delta).abs() < 1e-15);
    }
}
