//! Encoder and the three linear heads, recorded on a [`Tape`].
//!
//! Only the non-pad prefix of an input is run through the encoder: pads are
//! masked from attention and from every head, so they cannot influence any
//! other position.

use serde::{Deserialize, Serialize};

use crate::autodiff::{masked_softmax, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::params::ModelParams;
use crate::representation::EncodedInput;

/// Tape handles produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    /// `T`, one row per non-pad token.
    pub hidden: Var,
    /// `C`, the `[CLS]` row of `T`.
    pub cls: Var,
    /// `W_S · T_i`, `n × 1`.
    pub start_logits: Var,
    /// `W_E · T_i`, `n × 1`.
    pub end_logits: Var,
    /// `C · W_HA`, `1 × 2`.
    pub ha_logits: Var,
}

/// Tape handles for every parameter tensor, in [`ModelParams::tensors`] order.
pub struct ParamVars(pub Vec<Var>);

pub fn bind_params<'a>(tape: &mut Tape<'a>, params: &'a ModelParams) -> ParamVars {
    ParamVars(params.tensors().into_iter().map(|t| tape.input(t)).collect())
}

fn check_ids(params: &ModelParams, ids: &[usize]) -> Result<()> {
    let size = params.config.vocab_size;
    if let Some(&id) = ids.iter().find(|&&id| id >= size) {
        return Err(Error::Vocabulary { id, size });
    }
    if ids.is_empty() || ids.len() > params.config.max_len {
        return Err(Error::Shape(format!(
            "{} tokens for a model with max_len {}",
            ids.len(),
            params.config.max_len
        )));
    }
    Ok(())
}

/// Run the encoder over `ids`; returns `T` (`n × d`).
pub fn encode_tokens(tape: &mut Tape<'_>, pv: &ParamVars, params: &ModelParams, ids: &[usize]) -> Result<Var> {
    check_ids(params, ids)?;
    let c = &params.config;
    let (d, dh) = (c.d_model, c.head_dim());
    let p = &pv.0;
    let positions: Vec<usize> = (0..ids.len()).collect();
    let tok = tape.gather(p[0], ids);
    let pos = tape.gather(p[1], &positions);
    let mut x = tape.add(tok, pos);
    let inv = 1.0 / (dh as f64).sqrt();
    for l in 0..c.n_layers {
        let w = &p[2 + 12 * l..2 + 12 * (l + 1)];
        let h = tape.layer_norm(x, w[0], w[1]);
        let qkv = tape.matmul(h, w[2]);
        let qkv = tape.add_row(qkv, w[3]);
        let heads: Vec<Var> = (0..c.n_heads)
            .map(|hd| {
                let q = tape.slice_cols(qkv, hd * dh, dh);
                let k = tape.slice_cols(qkv, d + hd * dh, dh);
                let v = tape.slice_cols(qkv, 2 * d + hd * dh, dh);
                let s = tape.matmul_t(q, k);
                let s = tape.scale(s, inv);
                let a = tape.softmax_rows(s, None);
                tape.matmul(a, v)
            })
            .collect();
        let o = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads) };
        let o = tape.matmul(o, w[4]);
        let o = tape.add_row(o, w[5]);
        x = tape.add(x, o);
        let h2 = tape.layer_norm(x, w[6], w[7]);
        let f = tape.matmul(h2, w[8]);
        let f = tape.add_row(f, w[9]);
        let f = tape.gelu(f);
        let f = tape.matmul(f, w[10]);
        let f = tape.add_row(f, w[11]);
        x = tape.add(x, f);
    }
    let base = 2 + 12 * c.n_layers;
    Ok(tape.layer_norm(x, p[base], p[base + 1]))
}

/// Encoder plus heads for one encoded input.
pub fn forward(tape: &mut Tape<'_>, pv: &ParamVars, params: &ModelParams, input: &EncodedInput) -> Result<ForwardVars> {
    let n = input.content_len();
    let hidden = encode_tokens(tape, pv, params, &input.ids[..n])?;
    Ok(heads(tape, pv, params, hidden, input.cls_index))
}

pub fn heads(tape: &mut Tape<'_>, pv: &ParamVars, params: &ModelParams, hidden: Var, cls_index: usize) -> ForwardVars {
    let base = 2 + 12 * params.config.n_layers;
    let p = &pv.0;
    let start_logits = tape.matmul(hidden, p[base + 2]);
    let end_logits = tape.matmul(hidden, p[base + 3]);
    let cls = tape.slice_rows(hidden, cls_index, 1);
    let ha_logits = tape.matmul(cls, p[base + 4]);
    ForwardVars {
        hidden,
        cls,
        start_logits,
        end_logits,
        ha_logits,
    }
}

/// Model output for one input, as plain values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    pub start_logits: Vec<f64>,
    pub end_logits: Vec<f64>,
    /// Positions the span heads may use (`[CLS]` and `S_A`).
    pub mask: Vec<bool>,
    /// `ŷ_S`, zero on masked positions.
    pub y_hat_start: Vec<f64>,
    /// `ŷ_E`, zero on masked positions.
    pub y_hat_end: Vec<f64>,
    /// Softmax of `W_HA · C` over (no, yes).
    pub ha_probs: [f64; 2],
}

impl Predictions {
    /// `ŷ_HA`, the has-answer probability.
    pub fn y_hat_ha(&self) -> f64 {
        self.ha_probs[1]
    }
}

/// Softmax heads over the valid positions.
pub fn heads_forward(start_logits: &[f64], end_logits: &[f64], ha_logits: [f64; 2], mask: &[bool]) -> Result<Predictions> {
    if !mask.iter().any(|m| *m) {
        return Err(Error::DegenerateMask);
    }
    let ha = masked_softmax(&ha_logits, None);
    Ok(Predictions {
        y_hat_start: masked_softmax(start_logits, Some(mask)),
        y_hat_end: masked_softmax(end_logits, Some(mask)),
        start_logits: start_logits.to_vec(),
        end_logits: end_logits.to_vec(),
        mask: mask.to_vec(),
        ha_probs: [ha[0], ha[1]],
    })
}

/// `T` as plain values together with `C`.
pub fn encode(params: &ModelParams, input: &EncodedInput) -> Result<(Tensor, Vec<f64>)> {
    let mut tape = Tape::new();
    let pv = bind_params(&mut tape, params);
    let n = input.content_len();
    let t = encode_tokens(&mut tape, &pv, params, &input.ids[..n])?;
    let hidden = tape.value(t).clone();
    let c = hidden.row(input.cls_index).to_vec();
    Ok((hidden, c))
}

/// Inference for one input.
pub fn predict(params: &ModelParams, input: &EncodedInput) -> Result<Predictions> {
    let mut tape = Tape::new();
    let pv = bind_params(&mut tape, params);
    let f = forward(&mut tape, &pv, params, input)?;
    tape.check_finite()?;
    let n = input.content_len();
    let mask = &input.span_mask()[..n];
    let ha = &tape.value(f.ha_logits).data;
    heads_forward(
        &tape.value(f.start_logits).data,
        &tape.value(f.end_logits).data,
        [ha[0], ha[1]],
        mask,
    )
}
