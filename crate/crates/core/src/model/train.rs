use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::model::forward::{bind_params, forward};
use crate::model::loss::{loss_on_tape, LossWeights, Objective, Target};
use crate::model::optim::{optimizer_step, AdamState, AdamWConfig};
use crate::model::params::ModelParams;
use crate::representation::{EncodedInput, LabeledInput};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub objective: Objective,
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 2,
            batch_size: 8,
            optimizer: AdamWConfig::default(),
            objective: Objective::Fhl,
            weights: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.optimizer.lr >= 0.0 && self.optimizer.lr.is_finite()) {
            return Err(Error::Config(format!("invalid learning rate {}", self.optimizer.lr)));
        }
        self.weights.validate()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean per-instance loss of each epoch, measured before each update.
    pub epoch_losses: Vec<f64>,
    pub steps: u64,
}

pub fn target_of(input: &EncodedInput, has_answer: bool) -> Target {
    Target {
        start: input.y_start,
        end: input.y_end,
        has_answer,
    }
}

/// Loss of one instance and its gradient for every parameter tensor, scaled by `scale`.
pub fn instance_gradients(
    params: &ModelParams,
    input: &EncodedInput,
    target: &Target,
    objective: Objective,
    weights: &LossWeights,
    scale: f64,
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let pv = bind_params(&mut tape, params);
    let fv = forward(&mut tape, &pv, params, input)?;
    let n = input.content_len();
    let mask = &input.span_mask()[..n];
    let loss = loss_on_tape(&mut tape, &fv, mask, target, objective, weights)?;
    let out = tape.scale(loss, scale);
    let value = tape.value(loss).item();
    if !value.is_finite() {
        tape.check_finite()?;
    }
    let mut grads = tape.backward(out)?;
    let tensors = params
        .tensors()
        .iter()
        .zip(&pv.0)
        .map(|(t, v)| grads.take(*v).unwrap_or_else(|| Tensor::zeros(t.rows, t.cols)))
        .collect();
    Ok((value, tensors))
}

/// Forward-only loss of one instance.
pub fn instance_loss_value(
    params: &ModelParams,
    input: &EncodedInput,
    target: &Target,
    objective: Objective,
    weights: &LossWeights,
) -> Result<f64> {
    let mut tape = Tape::new();
    let pv = bind_params(&mut tape, params);
    let fv = forward(&mut tape, &pv, params, input)?;
    let n = input.content_len();
    let mask = &input.span_mask()[..n];
    let loss = loss_on_tape(&mut tape, &fv, mask, target, objective, weights)?;
    Ok(tape.value(loss).item())
}

/// Mini-batch AdamW over shuffled instances. Every batch minimizes the mean
/// of its per-instance objectives.
pub fn train(dataset: &[LabeledInput], init: ModelParams, cfg: &TrainConfig) -> Result<(ModelParams, TrainHistory)> {
    train_with(dataset, init, cfg, |_, _| {})
}

/// As [`train`], calling `on_epoch(epoch, mean_loss)` after each epoch.
pub fn train_with(
    dataset: &[LabeledInput],
    init: ModelParams,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<(ModelParams, TrainHistory)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut params = init;
    let mut state = AdamState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = TrainHistory::default();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            let mut acc: Option<Vec<Tensor>> = None;
            for &i in batch {
                let item = &dataset[i];
                let target = target_of(&item.input, item.has_answer);
                let (loss, grads) =
                    instance_gradients(&params, &item.input, &target, cfg.objective, &cfg.weights, scale)?;
                total += loss;
                match &mut acc {
                    None => acc = Some(grads),
                    Some(a) => a.iter_mut().zip(&grads).for_each(|(x, g)| x.add_assign(g)),
                }
            }
            let grads = acc.expect("non-empty batch");
            optimizer_step(&mut params, &grads, &mut state, &cfg.optimizer);
            if !params.is_finite() {
                return Err(Error::Numeric {
                    node: 0,
                    op: "optimizer_step",
                    detail: format!("non-finite parameters after step {}", state.step),
                });
            }
        }
        let mean = total / dataset.len() as f64;
        log::info!("epoch {} mean loss {mean:.6}", epoch + 1);
        on_epoch(epoch, mean);
        history.epoch_losses.push(mean);
    }
    history.steps = state.step;
    Ok((params, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::ModelConfig;
    use crate::representation::SegmentKind;

    fn toy_input(ids: Vec<usize>, answer_at: Option<usize>, max_len: usize) -> LabeledInput {
        // [CLS] q [SEP] a... [SEP] with S_A covering positions 3..len-1.
        let n = ids.len();
        let mut segments = vec![SegmentKind::Special, SegmentKind::Before, SegmentKind::Special];
        segments.extend(std::iter::repeat_n(SegmentKind::After, n - 4));
        segments.push(SegmentKind::Special);
        segments.resize(max_len, SegmentKind::Pad);
        let mut ids = ids;
        ids.resize(max_len, 0);
        let (s, e) = answer_at.map_or((0, 0), |p| (p, p));
        LabeledInput {
            input: EncodedInput {
                ids,
                segments,
                word_offsets: vec![None; max_len],
                cls_index: 0,
                y_start: s,
                y_end: e,
                attention_mask: (0..max_len).map(|i| i < n).collect(),
                truncated: false,
                gold_truncated: false,
            },
            has_answer: answer_at.is_some(),
        }
    }

    fn config() -> ModelConfig {
        ModelConfig {
            vocab_size: 12,
            max_len: 10,
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ff: 8,
        }
    }

    fn dataset() -> Vec<LabeledInput> {
        // Token 4 marks the answer, which is the token after it.
        vec![
            toy_input(vec![2, 5, 3, 4, 7, 6, 8, 3], Some(4), 10),
            toy_input(vec![2, 5, 3, 6, 4, 9, 8, 3], Some(5), 10),
            toy_input(vec![2, 5, 3, 6, 8, 4, 10, 3], Some(6), 10),
            toy_input(vec![2, 5, 3, 6, 8, 9, 7, 3], None, 10),
            toy_input(vec![2, 5, 3, 4, 11, 9, 7, 3], Some(4), 10),
            toy_input(vec![2, 5, 3, 8, 6, 10, 9, 3], None, 10),
        ]
    }

    #[test]
    fn zero_learning_rate_keeps_initial_params() {
        let init = ModelParams::init(config(), 4).unwrap();
        let cfg = TrainConfig {
            optimizer: AdamWConfig {
                lr: 0.0,
                ..Default::default()
            },
            ..Default::default()
        };
        let (p, h) = train(&dataset(), init.clone(), &cfg).unwrap();
        assert_eq!(p, init);
        assert_eq!(h.epoch_losses.len(), 2);
        assert_eq!(h.steps, 2);
    }

    #[test]
    fn same_seed_same_result() {
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 2,
            optimizer: AdamWConfig {
                lr: 1e-2,
                ..Default::default()
            },
            seed: 9,
            ..Default::default()
        };
        let a = train(&dataset(), ModelParams::init(config(), 1).unwrap(), &cfg).unwrap();
        let b = train(&dataset(), ModelParams::init(config(), 1).unwrap(), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn loss_decreases_on_a_separable_task() {
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 2,
            optimizer: AdamWConfig {
                lr: 1e-2,
                ..Default::default()
            },
            ..Default::default()
        };
        let (_, h) = train(&dataset(), ModelParams::init(config(), 2).unwrap(), &cfg).unwrap();
        assert!(h.epoch_losses.windows(2).all(|w| w[1] < w[0]), "{:?}", h.epoch_losses);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let init = ModelParams::init(config(), 0).unwrap();
        assert!(matches!(train(&[], init, &TrainConfig::default()), Err(Error::Config(_))));
    }

    #[test]
    fn gamma_term_has_no_path_to_the_answerability_head() {
        let p = ModelParams::init(config(), 3).unwrap();
        let item = &dataset()[0];
        let t = target_of(&item.input, true);
        let w = LossWeights {
            alpha: 0.0,
            beta: 0.0,
            gamma: 1.0,
        };
        let (_, g) = instance_gradients(&p, &item.input, &t, Objective::Fhl, &w, 1.0).unwrap();
        let w_ha = g.last().unwrap();
        assert!(w_ha.data.iter().all(|v| *v == 0.0));
    }
}
