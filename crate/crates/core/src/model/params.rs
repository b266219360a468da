use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub max_len: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
}

impl ModelConfig {
    pub fn new(vocab_size: usize, max_len: usize) -> Self {
        Self {
            vocab_size,
            max_len,
            d_model: 64,
            n_layers: 2,
            n_heads: 2,
            d_ff: 128,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} must be positive and divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size == 0 || self.max_len == 0 || self.d_ff == 0 {
            return Err(Error::Config("vocab_size, max_len and d_ff must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    /// Query, key and value projections side by side: `d × 3d`.
    pub w_qkv: Tensor,
    pub b_qkv: Tensor,
    pub w_out: Tensor,
    pub b_out: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
    pub w_ff1: Tensor,
    pub b_ff1: Tensor,
    pub w_ff2: Tensor,
    pub b_ff2: Tensor,
}

/// Encoder and head weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub embeddings: Tensor,
    pub positions: Tensor,
    pub layers: Vec<LayerParams>,
    pub final_gain: Tensor,
    pub final_bias: Tensor,
    /// Start head `W_S`, `d × 1`.
    pub w_start: Tensor,
    /// End head `W_E`, `d × 1`.
    pub w_end: Tensor,
    /// Answerability head `W_HA`, `d × 2` (columns: no, yes).
    pub w_ha: Tensor,
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Tensor {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect())
}

/// Sinusoidal position table; learned from this starting point.
fn sinusoids(max_len: usize, d: usize, scale: f64) -> Tensor {
    let mut t = Tensor::zeros(max_len, d);
    for pos in 0..max_len {
        for i in 0..d {
            let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let a = pos as f64 * rate;
            t.data[pos * d + i] = scale * if i % 2 == 0 { a.sin() } else { a.cos() };
        }
    }
    t
}

impl ModelParams {
    /// Weights drawn from `U(-1/√fan_in, 1/√fan_in)`, layer-norm gains at 1,
    /// biases at 0, positions sinusoidal.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_model;
        let bd = 1.0 / (d as f64).sqrt();
        let bff = 1.0 / (config.d_ff as f64).sqrt();
        let embeddings = uniform(&mut rng, config.vocab_size, d, bd);
        let positions = sinusoids(config.max_len, d, bd);
        let layers = (0..config.n_layers)
            .map(|_| LayerParams {
                ln1_gain: Tensor::filled(1, d, 1.0),
                ln1_bias: Tensor::zeros(1, d),
                w_qkv: uniform(&mut rng, d, 3 * d, bd),
                b_qkv: Tensor::zeros(1, 3 * d),
                w_out: uniform(&mut rng, d, d, bd),
                b_out: Tensor::zeros(1, d),
                ln2_gain: Tensor::filled(1, d, 1.0),
                ln2_bias: Tensor::zeros(1, d),
                w_ff1: uniform(&mut rng, d, config.d_ff, bd),
                b_ff1: Tensor::zeros(1, config.d_ff),
                w_ff2: uniform(&mut rng, config.d_ff, d, bff),
                b_ff2: Tensor::zeros(1, d),
            })
            .collect();
        Ok(Self {
            config,
            embeddings,
            positions,
            layers,
            final_gain: Tensor::filled(1, d, 1.0),
            final_bias: Tensor::zeros(1, d),
            w_start: uniform(&mut rng, d, 1, bd),
            w_end: uniform(&mut rng, d, 1, bd),
            w_ha: uniform(&mut rng, d, 2, bd),
        })
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.tensors_mut().into_iter().for_each(|t| t.data.iter_mut().for_each(|v| *v = 0.0));
        z
    }

    /// Every tensor in a fixed order shared by checkpoints, gradients and the optimizer.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v = vec![&self.embeddings, &self.positions];
        for l in &self.layers {
            v.extend([
                &l.ln1_gain, &l.ln1_bias, &l.w_qkv, &l.b_qkv, &l.w_out, &l.b_out, &l.ln2_gain, &l.ln2_bias, &l.w_ff1,
                &l.b_ff1, &l.w_ff2, &l.b_ff2,
            ]);
        }
        v.extend([&self.final_gain, &self.final_bias, &self.w_start, &self.w_end, &self.w_ha]);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![&mut self.embeddings, &mut self.positions];
        for l in &mut self.layers {
            v.extend([
                &mut l.ln1_gain,
                &mut l.ln1_bias,
                &mut l.w_qkv,
                &mut l.b_qkv,
                &mut l.w_out,
                &mut l.b_out,
                &mut l.ln2_gain,
                &mut l.ln2_bias,
                &mut l.w_ff1,
                &mut l.b_ff1,
                &mut l.w_ff2,
                &mut l.b_ff2,
            ]);
        }
        v.extend([
            &mut self.final_gain,
            &mut self.final_bias,
            &mut self.w_start,
            &mut self.w_end,
            &mut self.w_ha,
        ]);
        v
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let mut v = vec!["embeddings".to_string(), "positions".to_string()];
        for i in 0..self.layers.len() {
            for n in [
                "ln1_gain", "ln1_bias", "w_qkv", "b_qkv", "w_out", "b_out", "ln2_gain", "ln2_bias", "w_ff1", "b_ff1",
                "w_ff2", "b_ff2",
            ] {
                v.push(format!("layers.{i}.{n}"));
            }
        }
        v.extend(["final_gain", "final_bias", "w_start", "w_end", "w_ha"].map(String::from));
        v
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    /// Shapes implied by the config.
    pub fn check_shapes(&self) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        let expected = Self::init(*c, 0)?;
        if self.layers.len() != c.n_layers {
            return Err(Error::Shape(format!("{} layers, config says {}", self.layers.len(), c.n_layers)));
        }
        for ((name, got), want) in self.tensor_names().iter().zip(self.tensors()).zip(expected.tensors()) {
            if got.shape() != want.shape() || got.data.len() != got.rows * got.cols {
                return Err(Error::Shape(format!(
                    "{name}: {:?}, expected {:?}",
                    got.shape(),
                    want.shape()
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_bounded() {
        let c = ModelConfig::new(50, 32);
        let a = ModelParams::init(c, 7).unwrap();
        assert_eq!(a, ModelParams::init(c, 7).unwrap());
        assert_ne!(a, ModelParams::init(c, 8).unwrap());
        let bound = 1.0 / 8.0;
        assert!(a.embeddings.data.iter().all(|v| v.abs() < bound));
        assert!(a.is_finite());
        assert_eq!(a.tensors().len(), a.tensor_names().len());
        a.check_shapes().unwrap();
    }

    #[test]
    fn rejects_indivisible_heads() {
        let mut c = ModelConfig::new(10, 8);
        c.n_heads = 3;
        assert!(ModelParams::init(c, 0).is_err());
    }
}
