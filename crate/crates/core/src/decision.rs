//! Turning span logits and the answerability probability into an answer.
//!
//! A span `(i, j)` scores `start[i] + end[j]`. Its probability is a softmax
//! over every candidate with `j - i + 1 ≤ m` inside the valid segment. The
//! question is declared unanswerable iff `ŷ_HA ≤ τ1` and `P_best ≤ τ2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionConfig {
    pub tau1: f64,
    pub tau2: f64,
    /// Maximum answer length in tokens.
    pub max_answer_len: usize,
}

impl Default for DecisionConfig {
    fn default() -> Self {
        Self {
            tau1: 0.6,
            tau2: 0.8,
            max_answer_len: 200,
        }
    }
}

impl DecisionConfig {
    pub fn new(tau1: f64, tau2: f64, max_answer_len: usize) -> Result<Self> {
        let c = Self {
            tau1,
            tau2,
            max_answer_len,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, t) in [("tau1", self.tau1), ("tau2", self.tau2)] {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {t}")));
            }
        }
        if self.max_answer_len < 1 {
            return Err(Error::Config("max answer length must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    NoAnswer,
    Span { start: usize, end: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpanPrediction {
    pub verdict: Verdict,
    pub p_best: f64,
    pub y_hat_ha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub start: usize,
    pub end: usize,
    pub score: f64,
}

/// Every span of at most `m` positions lying wholly inside the valid mask,
/// ordered by start then end.
pub fn candidate_scores(
    start_logits: &[f64],
    end_logits: &[f64],
    valid_mask: &[bool],
    m: usize,
) -> Result<Vec<Candidate>> {
    if m < 1 {
        return Err(Error::Config("max answer length must be at least 1".into()));
    }
    let n = valid_mask.len();
    if start_logits.len() < n || end_logits.len() < n {
        return Err(Error::Shape(format!(
            "{} start and {} end logits for {n} positions",
            start_logits.len(),
            end_logits.len()
        )));
    }
    let mut out = Vec::new();
    for i in (0..n).filter(|&i| valid_mask[i]) {
        for j in i..n.min(i + m) {
            if !valid_mask[j] {
                break;
            }
            out.push(Candidate {
                start: i,
                end: j,
                score: start_logits[i] + end_logits[j],
            });
        }
    }
    Ok(out)
}

/// Highest-scoring candidate and its softmax probability among all candidates.
/// Ties go to the earliest candidate in start-then-end order.
pub fn best_span_probability(candidates: &[Candidate]) -> Result<(Candidate, f64)> {
    let first = *candidates.first().ok_or(Error::NoCandidate)?;
    let best = candidates
        .iter()
        .skip(1)
        .fold(first, |b, c| if c.score > b.score { *c } else { b });
    let z: f64 = candidates.iter().map(|c| (c.score - best.score).exp()).sum();
    Ok((best, 1.0 / z))
}

/// No answer iff both probabilities are at or below their thresholds.
pub fn decide(y_hat_ha: f64, p_best: f64, best: (usize, usize), cfg: &DecisionConfig) -> SpanPrediction {
    let verdict = if y_hat_ha <= cfg.tau1 && p_best <= cfg.tau2 {
        Verdict::NoAnswer
    } else {
        Verdict::Span {
            start: best.0,
            end: best.1,
        }
    };
    SpanPrediction {
        verdict,
        p_best,
        y_hat_ha,
    }
}

/// The whole candidate → probability → threshold pipeline.
pub fn decide_from_logits(
    start_logits: &[f64],
    end_logits: &[f64],
    valid_mask: &[bool],
    y_hat_ha: f64,
    cfg: &DecisionConfig,
) -> Result<SpanPrediction> {
    let cands = candidate_scores(start_logits, end_logits, valid_mask, cfg.max_answer_len)?;
    let (best, p) = best_span_probability(&cands)?;
    Ok(decide(y_hat_ha, p, (best.start, best.end), cfg))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionGrid {
    pub tau1: Vec<f64>,
    pub tau2: Vec<f64>,
    pub max_answer_len: Vec<usize>,
}

impl Default for DecisionGrid {
    fn default() -> Self {
        Self {
            tau1: vec![0.6, 0.7],
            tau2: vec![0.8, 0.9],
            max_answer_len: vec![200, 250],
        }
    }
}

impl DecisionGrid {
    /// All combinations in ascending `(τ1, τ2, m)` order.
    pub fn configs(&self) -> Result<Vec<DecisionConfig>> {
        let mut t1 = self.tau1.clone();
        let mut t2 = self.tau2.clone();
        let mut ms = self.max_answer_len.clone();
        t1.sort_by(f64::total_cmp);
        t2.sort_by(f64::total_cmp);
        ms.sort_unstable();
        t1.dedup();
        t2.dedup();
        ms.dedup();
        let mut out = Vec::new();
        for &a in &t1 {
            for &b in &t2 {
                for &m in &ms {
                    out.push(DecisionConfig::new(a, b, m)?);
                }
            }
        }
        if out.is_empty() {
            return Err(Error::Config("decision grid is empty".into()));
        }
        Ok(out)
    }
}

/// Evaluate `score` on every grid point and keep the best. Ties keep the
/// lexicographically smallest `(τ1, τ2, m)`. Returns the winner and every
/// `(config, score)` pair in grid order.
pub fn tune_with(
    grid: &DecisionGrid,
    mut score: impl FnMut(&DecisionConfig) -> Result<f64>,
) -> Result<(DecisionConfig, Vec<(DecisionConfig, f64)>)> {
    let mut results = Vec::new();
    for cfg in grid.configs()? {
        let s = score(&cfg)?;
        results.push((cfg, s));
    }
    let mut best = results[0];
    for r in &results[1..] {
        if r.1 > best.1 {
            best = *r;
        }
    }
    Ok((best.0, results))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn candidate_enumeration() {
        let c = candidate_scores(&[0.0; 3], &[0.0; 3], &[true; 3], 2).unwrap();
        let pairs: Vec<_> = c.iter().map(|c| (c.start, c.end)).collect();
        assert_eq!(pairs, vec![(0, 0), (0, 1), (1, 1), (1, 2), (2, 2)]);
        assert_eq!(candidate_scores(&[0.0; 7], &[0.0; 7], &[true; 7], 1).unwrap().len(), 7);
        assert!(candidate_scores(&[0.0], &[0.0], &[true], 0).is_err());
    }

    #[test]
    fn scores_match_hand_enumeration() {
        let c = candidate_scores(&[1.0, 2.0, 0.0], &[0.0, 1.0, 3.0], &[true; 3], 3).unwrap();
        let got: Vec<_> = c.iter().map(|c| (c.start, c.end, c.score)).collect();
        assert_eq!(
            got,
            vec![(0, 0, 1.0), (0, 1, 2.0), (0, 2, 4.0), (1, 1, 3.0), (1, 2, 5.0), (2, 2, 3.0)]
        );
        let (best, p) = best_span_probability(&c).unwrap();
        assert_eq!((best.start, best.end), (1, 2));
        let z: f64 = [1.0f64, 2.0, 4.0, 3.0, 5.0, 3.0].iter().map(|s| s.exp()).sum();
        assert!((p - 5f64.exp() / z).abs() < 1e-15);
    }

    #[test]
    fn masked_positions_break_spans() {
        let mask = [true, false, true, true, false];
        let c = candidate_scores(&[0.0; 5], &[0.0; 5], &mask, 5).unwrap();
        let pairs: Vec<_> = c.iter().map(|c| (c.start, c.end)).collect();
        assert_eq!(pairs, vec![(0, 0), (2, 2), (2, 3), (3, 3)]);
    }

    #[test]
    fn single_candidate_is_certain_and_ties_pick_earliest() {
        let one = [Candidate {
            start: 4,
            end: 6,
            score: -3.0,
        }];
        assert_eq!(best_span_probability(&one).unwrap().1, 1.0);
        let c = candidate_scores(&[1.0, 1.0], &[0.0, 0.0], &[true, true], 2).unwrap();
        let (b, _) = best_span_probability(&c).unwrap();
        assert_eq!((b.start, b.end), (0, 0));
        assert!(matches!(best_span_probability(&[]), Err(Error::NoCandidate)));
    }

    #[test]
    fn threshold_rule_is_inclusive_conjunction() {
        let cfg = DecisionConfig::new(0.6, 0.8, 200).unwrap();
        assert_eq!(decide(0.5, 0.7, (1, 2), &cfg).verdict, Verdict::NoAnswer);
        assert_eq!(decide(0.6, 0.8, (1, 2), &cfg).verdict, Verdict::NoAnswer);
        assert_eq!(
            decide(0.9, 0.1, (1, 2), &cfg).verdict,
            Verdict::Span { start: 1, end: 2 }
        );
        assert_eq!(
            decide(0.1, 0.81, (1, 2), &cfg).verdict,
            Verdict::Span { start: 1, end: 2 }
        );
    }

    #[test]
    fn grid_search_evaluates_every_point_and_breaks_ties_low() {
        let mut calls = 0;
        let (best, all) = tune_with(&DecisionGrid::default(), |_| {
            calls += 1;
            Ok(0.5)
        })
        .unwrap();
        assert_eq!(calls, 8);
        assert_eq!(all.len(), 8);
        assert_eq!(best, DecisionConfig::new(0.6, 0.8, 200).unwrap());

        let (best, _) = tune_with(&DecisionGrid::default(), |c| Ok(if c.tau1 == 0.7 { 1.0 } else { 0.0 })).unwrap();
        assert_eq!(best, DecisionConfig::new(0.7, 0.8, 200).unwrap());
    }
}
