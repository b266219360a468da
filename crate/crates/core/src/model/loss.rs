//! Flat-hierarchical loss and its three ablations.
//!
//! Per instance the full objective is
//! `α·L_HA + β·ŷ_HA·L_SE + γ·y_HA·L_SE`; an ablation drops one of the three
//! terms. Terms are always summed in the same order, so zeroing a weight of
//! the full objective reproduces the matching ablation bit for bit.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{masked_logsumexp, Tape, Var};
use crate::error::{Error, Result};
use crate::model::forward::{ForwardVars, Predictions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.8,
            beta: 0.3,
            gamma: 0.8,
        }
    }
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let w = Self { alpha, beta, gamma };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.beta, self.gamma];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config(format!("loss weights must be finite and non-negative: {all:?}")));
        }
        if all.iter().all(|v| *v == 0.0) {
            return Err(Error::Config("at least one loss weight must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    #[default]
    Fhl,
    NoHa,
    NoPse,
    NoLse,
}

impl Objective {
    pub const ALL: [Objective; 4] = [Objective::Fhl, Objective::NoHa, Objective::NoPse, Objective::NoLse];

    /// Which of the (answerability, predicted-gate, label-gate) terms are summed.
    pub fn terms(self) -> [bool; 3] {
        match self {
            Objective::Fhl => [true, true, true],
            Objective::NoHa => [false, true, true],
            Objective::NoPse => [true, false, true],
            Objective::NoLse => [true, true, false],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Objective::Fhl => "fhl",
            Objective::NoHa => "no-ha",
            Objective::NoPse => "no-pse",
            Objective::NoLse => "no-lse",
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Objective::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown loss {s:?}; expected fhl, no-ha, no-pse or no-lse")))
    }
}

/// Gold start/end positions and answerability for one input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Target {
    pub start: usize,
    pub end: usize,
    pub has_answer: bool,
}

impl Target {
    pub fn y_ha(&self) -> f64 {
        if self.has_answer {
            1.0
        } else {
            0.0
        }
    }
}

fn check_target(mask: &[bool], target: &Target) -> Result<()> {
    for (what, pos) in [("start", target.start), ("end", target.end)] {
        if !mask.get(pos).copied().unwrap_or(false) {
            return Err(Error::Label(format!("{what} target {pos} is not a valid span position")));
        }
    }
    Ok(())
}

/// `(L_HA, L_SE)` for one prediction.
pub fn component_losses(pred: &Predictions, target: &Target) -> Result<(f64, f64)> {
    check_target(&pred.mask, target)?;
    let ce = |logits: &[f64], t: usize| masked_logsumexp(logits, Some(&pred.mask)) - logits[t];
    let l_se = (ce(&pred.start_logits, target.start) + ce(&pred.end_logits, target.end)) * 0.5;
    let ha_logits = ha_logits_of(pred);
    let l_ha = masked_logsumexp(&ha_logits, None) - ha_logits[target.has_answer as usize];
    Ok((l_ha, l_se))
}

// Log-probabilities reproduce the logits up to a shift, which cross-entropy ignores.
fn ha_logits_of(pred: &Predictions) -> [f64; 2] {
    [pred.ha_probs[0].ln(), pred.ha_probs[1].ln()]
}

fn combine(objective: Objective, w: &LossWeights, l_ha: f64, y_hat_ha: f64, l_se: f64, y_ha: f64) -> f64 {
    let values = [l_ha * w.alpha, (y_hat_ha * l_se) * w.beta, l_se * (w.gamma * y_ha)];
    let mut total: Option<f64> = None;
    for (on, v) in objective.terms().into_iter().zip(values) {
        if on {
            total = Some(total.map_or(v, |t| t + v));
        }
    }
    total.unwrap_or(0.0)
}

/// Full objective for one instance.
pub fn loss_fhl(pred: &Predictions, target: &Target, w: &LossWeights) -> Result<f64> {
    instance_loss(Objective::Fhl, pred, target, w)
}

/// One ablated objective for one instance.
pub fn loss_ablation(variant: Objective, pred: &Predictions, target: &Target, w: &LossWeights) -> Result<f64> {
    if variant == Objective::Fhl {
        return Err(Error::Config("loss_ablation expects no-ha, no-pse or no-lse".into()));
    }
    instance_loss(variant, pred, target, w)
}

pub fn instance_loss(objective: Objective, pred: &Predictions, target: &Target, w: &LossWeights) -> Result<f64> {
    let (l_ha, l_se) = component_losses(pred, target)?;
    Ok(combine(objective, w, l_ha, pred.y_hat_ha(), l_se, target.y_ha()))
}

/// `1/N Σ` of the per-instance objective.
pub fn batch_loss(objective: Objective, preds: &[Predictions], targets: &[Target], w: &LossWeights) -> Result<f64> {
    if preds.is_empty() || preds.len() != targets.len() {
        return Err(Error::Shape(format!("{} predictions for {} targets", preds.len(), targets.len())));
    }
    let mut sum = 0.0;
    for (p, t) in preds.iter().zip(targets) {
        sum += instance_loss(objective, p, t, w)?;
    }
    Ok(sum / preds.len() as f64)
}

/// Record the per-instance objective on the tape.
pub fn loss_on_tape(
    tape: &mut Tape<'_>,
    fv: &ForwardVars,
    mask: &[bool],
    target: &Target,
    objective: Objective,
    w: &LossWeights,
) -> Result<Var> {
    check_target(mask, target)?;
    let ce_s = tape.cross_entropy(fv.start_logits, Some(mask), target.start);
    let ce_e = tape.cross_entropy(fv.end_logits, Some(mask), target.end);
    let both = tape.add(ce_s, ce_e);
    let l_se = tape.scale(both, 0.5);
    let terms = objective.terms();
    let mut parts = Vec::with_capacity(3);
    if terms[0] {
        let l_ha = tape.cross_entropy(fv.ha_logits, None, target.has_answer as usize);
        parts.push(tape.scale(l_ha, w.alpha));
    }
    if terms[1] {
        let probs = tape.softmax_rows(fv.ha_logits, None);
        let y_hat = tape.pick(probs, 1);
        let gated = tape.mul(y_hat, l_se);
        parts.push(tape.scale(gated, w.beta));
    }
    if terms[2] {
        parts.push(tape.scale(l_se, w.gamma * target.y_ha()));
    }
    let mut total = parts[0];
    for p in &parts[1..] {
        total = tape.add(total, *p);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::forward::heads_forward;

    fn toy() -> Predictions {
        let mask = [true, false, true, true, true];
        heads_forward(&[0.2, 9.0, -0.4, 1.1, 0.3], &[-1.0, 4.0, 0.5, 0.0, 2.0], [0.3, 0.9], &mask).unwrap()
    }

    #[test]
    fn matches_straight_line_arithmetic() {
        let p = toy();
        let t = Target {
            start: 2,
            end: 4,
            has_answer: true,
        };
        // Independent recomputation over the four valid positions.
        let zs = (0.2f64).exp() + (-0.4f64).exp() + (1.1f64).exp() + (0.3f64).exp();
        let ze = (-1.0f64).exp() + (0.5f64).exp() + 1.0 + (2.0f64).exp();
        let ce_s = -((-0.4f64).exp() / zs).ln();
        let ce_e = -((2.0f64).exp() / ze).ln();
        let l_se = (ce_s + ce_e) / 2.0;
        let yhat = (0.9f64).exp() / ((0.3f64).exp() + (0.9f64).exp());
        let l_ha = -yhat.ln();
        let want = 0.8 * l_ha + 0.3 * yhat * l_se + 0.8 * 1.0 * l_se;
        let got = loss_fhl(&p, &t, &LossWeights::default()).unwrap();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn gamma_term_vanishes_without_gold_answer() {
        let p = toy();
        let t = Target {
            start: 0,
            end: 0,
            has_answer: false,
        };
        let a = loss_fhl(&p, &t, &LossWeights::new(0.8, 0.3, 0.8).unwrap()).unwrap();
        let b = loss_fhl(&p, &t, &LossWeights::new(0.8, 0.3, 5.0).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn confident_correct_answerability_adds_beta_and_gamma() {
        let mut p = toy();
        p.ha_probs = [0.0, 1.0];
        let t = Target {
            start: 3,
            end: 3,
            has_answer: true,
        };
        let (l_ha, l_se) = component_losses(&p, &t).unwrap();
        assert_eq!(l_ha, 0.0);
        let w = LossWeights::default();
        let got = loss_fhl(&p, &t, &w).unwrap();
        assert!((got - (w.alpha * l_ha + (w.beta + w.gamma) * l_se)).abs() < 1e-12);
    }

    #[test]
    fn ablations_equal_zeroed_weights() {
        let p = toy();
        let t = Target {
            start: 2,
            end: 3,
            has_answer: true,
        };
        let w = LossWeights::new(0.7, 0.2, 0.7).unwrap();
        let zero = |a: f64, b: f64, g: f64| LossWeights {
            alpha: a,
            beta: b,
            gamma: g,
        };
        assert_eq!(
            loss_ablation(Objective::NoHa, &p, &t, &w).unwrap(),
            loss_fhl(&p, &t, &zero(0.0, 0.2, 0.7)).unwrap()
        );
        assert_eq!(
            loss_ablation(Objective::NoPse, &p, &t, &w).unwrap(),
            loss_fhl(&p, &t, &zero(0.7, 0.0, 0.7)).unwrap()
        );
        assert_eq!(
            loss_ablation(Objective::NoLse, &p, &t, &w).unwrap(),
            loss_fhl(&p, &t, &zero(0.7, 0.2, 0.0)).unwrap()
        );
    }

    #[test]
    fn target_on_masked_position_is_a_label_error() {
        let t = Target {
            start: 1,
            end: 2,
            has_answer: true,
        };
        assert!(matches!(loss_fhl(&toy(), &t, &LossWeights::default()), Err(Error::Label(_))));
    }

    #[test]
    fn weights_are_validated() {
        assert!(LossWeights::new(0.0, 0.0, 0.0).is_err());
        assert!(LossWeights::new(-0.1, 0.3, 0.8).is_err());
        assert!(LossWeights::new(0.0, 0.3, 0.0).is_ok());
        assert_eq!("no-pse".parse::<Objective>().unwrap(), Objective::NoPse);
        assert!("nope".parse::<Objective>().is_err());
    }
}
