//! Word-index EM/F1 with multi-annotation scoring, split reports,
//! Krippendorff's α and the first-utterance baseline.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transcript::{ranges_from_words, AnswerAnnotation, Answerability, QAInstance, WordRange, WordRef};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Answer,
    NoAnswer,
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub question_id: String,
    pub verdict: Outcome,
    /// Answer words as `[utterance, first, last]` ranges; `null` for no answer.
    pub span_words: Option<Vec<WordRange>>,
    pub p_best: f64,
    pub y_hat_ha: f64,
}

impl PredictionRecord {
    pub fn no_answer(question_id: impl Into<String>, p_best: f64, y_hat_ha: f64) -> Self {
        Self {
            question_id: question_id.into(),
            verdict: Outcome::NoAnswer,
            span_words: None,
            p_best,
            y_hat_ha,
        }
    }

    pub fn answer(question_id: impl Into<String>, words: &BTreeSet<WordRef>, p_best: f64, y_hat_ha: f64) -> Self {
        Self {
            question_id: question_id.into(),
            verdict: Outcome::Answer,
            span_words: Some(ranges_from_words(words)),
            p_best,
            y_hat_ha,
        }
    }

    /// Predicted words, or `None` for no answer.
    pub fn answer_words(&self) -> Option<BTreeSet<WordRef>> {
        match self.verdict {
            Outcome::NoAnswer => None,
            Outcome::Answer => Some(
                self.span_words
                    .iter()
                    .flatten()
                    .flat_map(|r| r.words().collect::<Vec<_>>())
                    .collect(),
            ),
        }
    }
}

/// EM and F1 in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub em: f64,
    pub f1: f64,
}

impl Score {
    pub const ZERO: Score = Score { em: 0.0, f1: 0.0 };
    pub const ONE: Score = Score { em: 1.0, f1: 1.0 };

    fn max(self, o: Score) -> Score {
        Score {
            em: self.em.max(o.em),
            f1: self.f1.max(o.f1),
        }
    }
}

/// Index-level F1. Two empty sets agree perfectly; one empty set scores 0.
pub fn f1_indices(pred: &BTreeSet<WordRef>, gold: &BTreeSet<WordRef>) -> f64 {
    match (pred.is_empty(), gold.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let common = pred.intersection(gold).count() as f64;
    if common == 0.0 {
        return 0.0;
    }
    let p = common / pred.len() as f64;
    let r = common / gold.len() as f64;
    2.0 * p * r / (p + r)
}

pub fn exact_match(pred: &BTreeSet<WordRef>, gold: &BTreeSet<WordRef>) -> f64 {
    if pred == gold {
        1.0
    } else {
        0.0
    }
}

/// Score against one judge. No answer matches an unanswerable annotation and
/// nothing else.
pub fn score_annotation(pred: Option<&BTreeSet<WordRef>>, ann: &AnswerAnnotation) -> Score {
    match (pred, ann.is_unanswerable) {
        (None, true) => Score::ONE,
        (None, false) | (Some(_), true) => Score::ZERO,
        (Some(p), false) => {
            let gold = ann.word_set();
            Score {
                em: exact_match(p, &gold),
                f1: f1_indices(p, &gold),
            }
        }
    }
}

fn best_of<'a>(pred: Option<&BTreeSet<WordRef>>, anns: impl Iterator<Item = &'a AnswerAnnotation>) -> Score {
    anns.map(|a| score_annotation(pred, a)).fold(Score::ZERO, Score::max)
}

/// Element-wise maximum over the annotations.
pub fn question_score(pred: Option<&BTreeSet<WordRef>>, annotations: &[AnswerAnnotation]) -> Result<Score> {
    if annotations.is_empty() {
        return Err(Error::MissingAnnotation("cannot score a question without annotations".into()));
    }
    Ok(best_of(pred, annotations.iter()))
}

/// Mean over the `n` leave-one-out subsets of the per-subset maximum.
pub fn human_comparable_score(pred: Option<&BTreeSet<WordRef>>, annotations: &[AnswerAnnotation]) -> Result<Score> {
    let n = annotations.len();
    if n < 2 {
        log::warn!("human-comparable scoring needs two annotations, found {n}; using the plain maximum");
        return question_score(pred, annotations);
    }
    let per: Vec<Score> = annotations.iter().map(|a| score_annotation(pred, a)).collect();
    let mut sum = Score::ZERO;
    for skip in 0..n {
        let m = per
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != skip)
            .fold(Score::ZERO, |acc, (_, s)| acc.max(*s));
        sum.em += m.em;
        sum.f1 += m.f1;
    }
    Ok(Score {
        em: sum.em / n as f64,
        f1: sum.f1 / n as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoringMode {
    #[default]
    Standard,
    HumanComparable,
}

impl FromStr for ScoringMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(ScoringMode::Standard),
            "human-comparable" => Ok(ScoringMode::HumanComparable),
            other => Err(Error::Config(format!(
                "unknown scoring mode {other:?}; expected standard or human-comparable"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    HasAns,
    NoAns,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionResult {
    pub question_id: String,
    pub split: Split,
    pub em: f64,
    pub f1: f64,
}

/// Macro averages in percent.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SplitScores {
    pub count: usize,
    pub em: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: ScoringMode,
    pub all: SplitScores,
    pub has_ans: SplitScores,
    pub no_ans: SplitScores,
    /// Sorted by question id.
    pub per_question: Vec<QuestionResult>,
}

fn aggregate<'a>(rows: impl Iterator<Item = &'a QuestionResult>) -> SplitScores {
    let (mut count, mut em, mut f1) = (0, 0.0, 0.0);
    for r in rows {
        count += 1;
        em += r.em;
        f1 += r.f1;
    }
    if count == 0 {
        return SplitScores::default();
    }
    SplitScores {
        count,
        em: 100.0 * em / count as f64,
        f1: 100.0 * f1 / count as f64,
    }
}

/// Score every question and macro-average per split. Questions unanswerable by
/// majority form the NoAns split.
pub fn evaluate(predictions: &[PredictionRecord], dataset: &[QAInstance], mode: ScoringMode) -> Result<EvalReport> {
    let mut by_id: BTreeMap<&str, &PredictionRecord> = BTreeMap::new();
    for p in predictions {
        if by_id.insert(&p.question_id, p).is_some() {
            return Err(Error::Alignment(format!("duplicate prediction for {}", p.question_id)));
        }
    }
    let mut seen = HashSet::new();
    let mut rows = Vec::with_capacity(dataset.len());
    for inst in dataset {
        if !seen.insert(inst.id.as_str()) {
            return Err(Error::Alignment(format!("duplicate gold question {}", inst.id)));
        }
        let pred = by_id
            .get(inst.id.as_str())
            .ok_or_else(|| Error::Alignment(format!("no prediction for question {}", inst.id)))?;
        let words = pred.answer_words();
        let s = match mode {
            ScoringMode::Standard => question_score(words.as_ref(), &inst.annotations)?,
            ScoringMode::HumanComparable => human_comparable_score(words.as_ref(), &inst.annotations)?,
        };
        rows.push(QuestionResult {
            question_id: inst.id.clone(),
            split: match inst.answerability {
                Answerability::Answerable => Split::HasAns,
                Answerability::Unanswerable => Split::NoAns,
            },
            em: s.em,
            f1: s.f1,
        });
    }
    if let Some(extra) = by_id.keys().find(|id| !seen.contains(*id)) {
        return Err(Error::Alignment(format!("prediction for unknown question {extra}")));
    }
    rows.sort_by(|a, b| a.question_id.cmp(&b.question_id));
    Ok(EvalReport {
        mode,
        all: aggregate(rows.iter()),
        has_ans: aggregate(rows.iter().filter(|r| r.split == Split::HasAns)),
        no_ans: aggregate(rows.iter().filter(|r| r.split == Split::NoAns)),
        per_question: rows,
    })
}

impl EvalReport {
    /// Aligned text table with one row per split.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<8} {:>7} {:>7} {:>7}", "split", "count", "EM", "F1");
        for (name, sc) in [("All", self.all), ("HasAns", self.has_ans), ("NoAns", self.no_ans)] {
            if sc.count == 0 {
                let _ = writeln!(s, "{name:<8} {:>7} {:>7} {:>7}", 0, "-", "-");
            } else {
                let _ = writeln!(s, "{name:<8} {:>7} {:>7.1} {:>7.1}", sc.count, sc.em, sc.f1);
            }
        }
        s
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.table())
    }
}

/// Krippendorff's α for nominal data. Each unit lists the values the judges
/// gave it; units with fewer than two values are not pairable and are skipped.
pub fn krippendorff_alpha(units: &[Vec<usize>]) -> Result<f64> {
    let mut o: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for u in units.iter().filter(|u| u.len() >= 2) {
        let w = 1.0 / (u.len() - 1) as f64;
        for (a, &c) in u.iter().enumerate() {
            for (b, &k) in u.iter().enumerate() {
                if a != b {
                    *o.entry((c, k)).or_default() += w;
                }
            }
        }
    }
    let mut n_c: BTreeMap<usize, f64> = BTreeMap::new();
    for (&(c, _), v) in &o {
        *n_c.entry(c).or_default() += v;
    }
    let n: f64 = n_c.values().sum();
    if n < 2.0 {
        return Err(Error::Config("Krippendorff's alpha needs at least one unit coded twice".into()));
    }
    let d_o: f64 = o.iter().filter(|((c, k), _)| c != k).map(|(_, v)| v).sum::<f64>() / n;
    let mut d_e = 0.0;
    for (c, a) in &n_c {
        for (k, b) in &n_c {
            if c != k {
                d_e += a * b;
            }
        }
    }
    d_e /= n * (n - 1.0);
    if d_e == 0.0 {
        log::warn!("all judgements share one value; reporting alpha = 1");
        return Ok(1.0);
    }
    Ok(1.0 - d_o / d_e)
}

/// Agreement over a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub alpha: f64,
    pub questions: usize,
    pub units: usize,
}

/// α over binary word-inclusion judgements pooled across questions. The units
/// of a question are the words of its after window plus any annotated word.
pub fn corpus_alpha(instances: &[QAInstance]) -> Result<AgreementReport> {
    let mut units = Vec::new();
    let mut questions = 0;
    for inst in instances.iter().filter(|i| i.annotations.len() >= 2) {
        questions += 1;
        let sets: Vec<BTreeSet<WordRef>> = inst.annotations.iter().map(|a| a.word_set()).collect();
        let mut words: BTreeSet<WordRef> = inst.after_words().into_iter().collect();
        sets.iter().for_each(|s| words.extend(s));
        for w in words {
            units.push(sets.iter().map(|s| s.contains(&w) as usize).collect());
        }
    }
    Ok(AgreementReport {
        alpha: krippendorff_alpha(&units)?,
        questions,
        units: units.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineSpan {
    /// All of `u_{q+1}`.
    #[default]
    NextUtterance,
    /// The rest of the question utterance after the question sentence.
    Suffix,
}

/// Always answers with a whole utterance following the question.
pub fn first_utterance_baseline(instance: &QAInstance, span: BaselineSpan) -> PredictionRecord {
    let piece = match span {
        BaselineSpan::NextUtterance => instance
            .after_window
            .iter()
            .find(|p| p.utterance == instance.q_index + 1 && !p.is_empty()),
        BaselineSpan::Suffix => instance.after_window.first().filter(|p| !p.is_empty()),
    };
    match piece {
        Some(p) => PredictionRecord::answer(&instance.id, &p.word_refs().collect(), 1.0, 1.0),
        None => {
            log::warn!("{}: no utterance after the question; predicting no answer", instance.id);
            PredictionRecord::no_answer(&instance.id, 0.0, 0.0)
        }
    }
}
