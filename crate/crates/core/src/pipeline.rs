//! Glue between instances, the model, the decision rule and evaluation.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::decision::{decide_from_logits, tune_with, DecisionConfig, DecisionGrid, SpanPrediction, Verdict};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, PredictionRecord, ScoringMode};
use crate::model::{predict, ModelParams};
use crate::representation::{encode_instance, encode_training, instance_tokens, LabeledInput, RepresentationMode, Vocab};
use crate::transcript::{QAInstance, WordRef};

/// Model outputs for one question, kept raw so decision settings can be re-applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPrediction {
    pub question_id: String,
    pub start_logits: Vec<f64>,
    pub end_logits: Vec<f64>,
    /// Positions eligible as answer tokens (`S_A`).
    pub answer_mask: Vec<bool>,
    pub word_offsets: Vec<Option<WordRef>>,
    pub y_hat_ha: f64,
}

impl RawPrediction {
    pub fn decide(&self, cfg: &DecisionConfig) -> Result<(SpanPrediction, PredictionRecord)> {
        let sp = decide_from_logits(&self.start_logits, &self.end_logits, &self.answer_mask, self.y_hat_ha, cfg)?;
        let record = match sp.verdict {
            Verdict::NoAnswer => PredictionRecord::no_answer(&self.question_id, sp.p_best, sp.y_hat_ha),
            Verdict::Span { start, end } => {
                let words: BTreeSet<WordRef> = self.word_offsets[start..=end].iter().flatten().copied().collect();
                PredictionRecord::answer(&self.question_id, &words, sp.p_best, sp.y_hat_ha)
            }
        };
        Ok((sp, record))
    }
}

pub fn raw_predict(
    params: &ModelParams,
    instance: &QAInstance,
    mode: RepresentationMode,
    vocab: &Vocab,
) -> Result<RawPrediction> {
    if vocab.len() != params.config.vocab_size {
        return Err(Error::Vocabulary {
            id: vocab.len(),
            size: params.config.vocab_size,
        });
    }
    let input = encode_instance(instance, mode, vocab, params.config.max_len)?;
    let pred = predict(params, &input)?;
    let n = input.content_len();
    Ok(RawPrediction {
        question_id: instance.id.clone(),
        start_logits: pred.start_logits,
        end_logits: pred.end_logits,
        answer_mask: input.answer_mask()[..n].to_vec(),
        word_offsets: input.word_offsets[..n].to_vec(),
        y_hat_ha: pred.ha_probs[1],
    })
}

/// Vocabulary over every token the representation produces for `instances`.
pub fn build_vocab(instances: &[QAInstance], mode: RepresentationMode, min_count: usize) -> Vocab {
    let tokens: Vec<String> = instances.iter().flat_map(|i| instance_tokens(i, mode)).collect();
    Vocab::build(tokens.iter().map(String::as_str), min_count)
}

/// One training input per (question, annotation). Questions that leave no
/// room for the after segment are skipped with a warning.
pub fn encode_training_set(
    instances: &[QAInstance],
    mode: RepresentationMode,
    vocab: &Vocab,
    max_len: usize,
) -> Result<Vec<LabeledInput>> {
    let mut out = Vec::new();
    for inst in instances {
        match encode_training(inst, mode, vocab, max_len) {
            Ok(v) => out.extend(v),
            Err(Error::QuestionTooLong { needed, available }) => {
                log::warn!("{}: question needs {needed} tokens of {available}; skipped", inst.id);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Grid-search the decision thresholds for best All-Data F1 on `dev`.
pub fn tune_decision(
    dev: &[RawPrediction],
    gold: &[QAInstance],
    grid: &DecisionGrid,
) -> Result<(DecisionConfig, Vec<(DecisionConfig, f64)>)> {
    if dev.is_empty() || gold.is_empty() {
        return Err(Error::Config("decision tuning needs a non-empty development set".into()));
    }
    tune_with(grid, |cfg| {
        let records = dev.iter().map(|r| r.decide(cfg).map(|x| x.1)).collect::<Result<Vec<_>>>()?;
        Ok(evaluate(&records, gold, ScoringMode::Standard)?.all.f1)
    })
}
