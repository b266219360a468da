//! Run configuration: built-in defaults, overridden by a flat TOML file,
//! overridden by command-line flags.

use std::path::Path;

use meeqa_core::decision::{DecisionConfig, DecisionGrid};
use meeqa_core::model::{AdamWConfig, LossWeights, ModelConfig, Objective, TrainConfig};
use meeqa_core::representation::{RepresentationMode, SpeakerMode};
use meeqa_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub speaker_mode: SpeakerMode,
    pub question_k: usize,
    /// Utterances after the question (`l`).
    pub window_after: usize,
    pub max_len: usize,
    pub min_count: usize,

    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_ff: usize,

    pub loss: Objective,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,

    pub tau1: f64,
    pub tau2: f64,
    pub max_answer_len: usize,

    pub alpha_grid: Vec<f64>,
    pub beta_grid: Vec<f64>,
    pub gamma_grid: Vec<f64>,
    pub tau1_grid: Vec<f64>,
    pub tau2_grid: Vec<f64>,
    pub max_answer_len_grid: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        let d = DecisionConfig::default();
        let g = DecisionGrid::default();
        let t = TrainConfig::default();
        Self {
            seed: 0,
            speaker_mode: SpeakerMode::Switch,
            question_k: 1,
            window_after: 60,
            max_len: 512,
            min_count: 1,
            d_model: 64,
            layers: 2,
            heads: 2,
            d_ff: 128,
            loss: Objective::Fhl,
            alpha: w.alpha,
            beta: w.beta,
            gamma: w.gamma,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.optimizer.lr,
            weight_decay: t.optimizer.weight_decay,
            tau1: d.tau1,
            tau2: d.tau2,
            max_answer_len: d.max_answer_len,
            alpha_grid: vec![0.7, 0.8],
            beta_grid: vec![0.2, 0.3],
            gamma_grid: vec![0.7, 0.8],
            tau1_grid: g.tau1,
            tau2_grid: g.tau2,
            max_answer_len_grid: g.max_answer_len,
        }
    }
}

impl RunConfig {
    /// Defaults overlaid with the keys of a flat TOML file.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    pub fn representation(&self) -> Result<RepresentationMode> {
        RepresentationMode::new(self.speaker_mode, self.question_k)
    }

    pub fn weights(&self) -> Result<LossWeights> {
        LossWeights::new(self.alpha, self.beta, self.gamma)
    }

    pub fn decision(&self) -> Result<DecisionConfig> {
        DecisionConfig::new(self.tau1, self.tau2, self.max_answer_len)
    }

    pub fn decision_grid(&self) -> DecisionGrid {
        DecisionGrid {
            tau1: self.tau1_grid.clone(),
            tau2: self.tau2_grid.clone(),
            max_answer_len: self.max_answer_len_grid.clone(),
        }
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            max_len: self.max_len,
            d_model: self.d_model,
            n_layers: self.layers,
            n_heads: self.heads,
            d_ff: self.d_ff,
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            seed: self.seed,
            epochs: self.epochs,
            batch_size: self.batch_size,
            optimizer: AdamWConfig {
                lr: self.lr,
                weight_decay: self.weight_decay,
                ..Default::default()
            },
            objective: self.loss,
            weights: self.weights()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every loss-weight combination of the grid, in ascending order.
    pub fn weight_grid(&self) -> Result<Vec<LossWeights>> {
        let mut out = Vec::new();
        for &a in &self.alpha_grid {
            for &b in &self.beta_grid {
                for &g in &self.gamma_grid {
                    out.push(LossWeights::new(a, b, g)?);
                }
            }
        }
        if out.is_empty() {
            return Err(Error::Config("loss-weight grid is empty".into()));
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        self.representation()?;
        self.decision()?;
        self.train_config()?;
        self.decision_grid().configs()?;
        self.weight_grid()?;
        self.model_config(1).validate()?;
        if self.window_after == 0 || self.max_len < 4 {
            return Err(Error::Config("window_after must be ≥ 1 and max_len ≥ 4".into()));
        }
        Ok(())
    }
}
