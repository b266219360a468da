//! Span and answerability model: a small self-attention encoder with start,
//! end and has-answer heads, the flat-hierarchical loss, AdamW and the
//! training loop.

pub mod checkpoint;
pub mod forward;
pub mod loss;
pub mod optim;
pub mod params;
pub mod train;

pub use checkpoint::Checkpoint;
pub use forward::{encode, heads_forward, predict, Predictions};
pub use loss::{batch_loss, loss_ablation, loss_fhl, LossWeights, Objective, Target};
pub use optim::{optimizer_step, AdamState, AdamWConfig};
pub use params::{ModelConfig, ModelParams};
pub use train::{instance_gradients, train, TrainConfig, TrainHistory};
