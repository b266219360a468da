//! Spoken-language cleanup applied before representation.
//!
//! Every rule works on words that remember the index of the source word they
//! came from, so annotation coordinates can be carried through cleaning.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transcript::{
    locate_question, merge_consecutive_utterances, AnswerAnnotation, Meeting, QAInstance, WordRange, WordRef,
};

pub const DEFAULT_FILLERS: &[&str] = &["uh", "um", "hmm", "huh", "er", "erm"];

const SYMBOLS: &[char] = &['@', '_', '(', ')', '[', ']', '{', '}', '<', '>'];

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CleanReport {
    pub removed_comments: usize,
    pub removed_fillers: usize,
    pub removed_repetitions: usize,
    pub removed_symbols: usize,
    pub merged_spans: usize,
    pub dropped_instances: usize,
    /// One-character words ("a", "I") kept in non-strict mode.
    pub kept_short_words: usize,
    pub removed_annotations: usize,
    pub warnings: Vec<String>,
}

impl CleanReport {
    fn absorb(&mut self, other: CleanReport) {
        self.removed_comments += other.removed_comments;
        self.removed_fillers += other.removed_fillers;
        self.removed_repetitions += other.removed_repetitions;
        self.removed_symbols += other.removed_symbols;
        self.merged_spans += other.merged_spans;
        self.dropped_instances += other.dropped_instances;
        self.kept_short_words += other.kept_short_words;
        self.removed_annotations += other.removed_annotations;
        self.warnings.extend(other.warnings);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CleanOptions {
    pub fillers: BTreeSet<String>,
    pub collapse_repetitions: bool,
    /// Remove every one-character word, including "a" and "I".
    pub strict_one_char: bool,
    /// Merge adjacent same-speaker utterances after cleaning.
    pub merge_utterances: bool,
}

impl Default for CleanOptions {
    fn default() -> Self {
        Self {
            fillers: DEFAULT_FILLERS.iter().map(|s| s.to_string()).collect(),
            collapse_repetitions: true,
            strict_one_char: false,
            merge_utterances: true,
        }
    }
}

/// Load a filler lexicon: one token per line, blank lines and `#` comments ignored.
pub fn load_filler_lexicon(path: impl AsRef<Path>) -> Result<BTreeSet<String>> {
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect())
}

/// A word plus the index of the source word it was cut from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourcedWord {
    pub source: usize,
    pub text: String,
}

/// Cleaned text with a map back to the original word positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CleanedText {
    pub words: Vec<SourcedWord>,
}

impl CleanedText {
    pub fn text(&self) -> String {
        self.words.iter().map(|w| w.text.as_str()).collect::<Vec<_>>().join(" ")
    }

    /// Source word of cleaned word `i`.
    pub fn source_of(&self, i: usize) -> Option<usize> {
        self.words.get(i).map(|w| w.source)
    }

    /// Cleaned words cut from source word `source` (several if a comment split it).
    pub fn targets_of(&self, source: usize) -> Vec<usize> {
        self.words
            .iter()
            .enumerate()
            .filter(|(_, w)| w.source == source)
            .map(|(i, _)| i)
            .collect()
    }

    /// Cleaned words whose source lies in the inclusive range.
    pub fn remap_range(&self, start: usize, end: usize) -> Option<(usize, usize)> {
        let hits: Vec<usize> = self
            .words
            .iter()
            .enumerate()
            .filter(|(_, w)| (start..=end).contains(&w.source))
            .map(|(i, _)| i)
            .collect();
        Some((*hits.first()?, *hits.last()?))
    }
}

fn sourced(text: &str) -> Vec<SourcedWord> {
    text.split_whitespace()
        .enumerate()
        .map(|(i, w)| SourcedWord {
            source: i,
            text: w.to_string(),
        })
        .collect()
}

fn join(words: &[SourcedWord]) -> String {
    words.iter().map(|w| w.text.as_str()).collect::<Vec<_>>().join(" ")
}

fn note_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)\b(?:secretary|transcriber|editor|clerk)'?s\s+note\s*:[^.]*(?:\.|$)").unwrap()
    })
}

fn strip_comment_words(words: Vec<SourcedWord>, report: &mut CleanReport) -> Vec<SourcedWord> {
    // Flatten to characters tagged with their source word; word gaps are `None`.
    let mut chars: Vec<(char, Option<usize>)> = Vec::new();
    for (i, w) in words.iter().enumerate() {
        if i > 0 {
            chars.push((' ', None));
        }
        chars.extend(w.text.chars().map(|c| (c, Some(w.source))));
    }

    let mut keep = vec![true; chars.len()];
    let mut i = 0;
    while i < chars.len() {
        let close = match chars[i].0 {
            '<' => '>',
            '[' => ']',
            _ => {
                i += 1;
                continue;
            }
        };
        let open = chars[i].0;
        let mut depth = 0usize;
        let mut end = None;
        for (j, &(c, _)) in chars.iter().enumerate().skip(i) {
            if c == open {
                depth += 1;
            } else if c == close {
                depth -= 1;
                if depth == 0 {
                    end = Some(j);
                    break;
                }
            }
        }
        match end {
            Some(j) => {
                keep[i..=j].iter_mut().for_each(|k| *k = false);
                report.removed_comments += 1;
                i = j + 1;
            }
            None => {
                let rest: String = chars[i..].iter().map(|c| c.0).collect();
                report.warnings.push(format!("unbalanced bracket left in place: {rest:?}"));
                break;
            }
        }
    }

    // Transcriber notes, matched on the surviving text.
    let mut kept: Vec<(char, Option<usize>)> = Vec::with_capacity(chars.len());
    for (c, k) in chars.into_iter().zip(keep) {
        kept.push(if k { c } else { (' ', None) });
    }
    let flat: String = kept.iter().map(|c| c.0).collect();
    let byte_to_char: Vec<usize> = {
        let mut v = vec![0; flat.len() + 1];
        for (ci, (bi, ch)) in flat.char_indices().enumerate() {
            for b in bi..bi + ch.len_utf8() {
                v[b] = ci;
            }
        }
        v[flat.len()] = kept.len();
        v
    };
    for m in note_pattern().find_iter(&flat) {
        for c in &mut kept[byte_to_char[m.start()]..byte_to_char[m.end()]] {
            *c = (' ', None);
        }
        report.removed_comments += 1;
    }

    let mut out = Vec::new();
    let mut cur: Option<SourcedWord> = None;
    for (c, src) in kept {
        match (c.is_whitespace(), src) {
            (false, Some(s)) => match cur.as_mut() {
                Some(w) => w.text.push(c),
                None => {
                    cur = Some(SourcedWord {
                        source: s,
                        text: c.to_string(),
                    })
                }
            },
            _ => out.extend(cur.take()),
        }
    }
    out.extend(cur);
    out
}

fn core_lower(w: &str) -> String {
    w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()
}

fn remove_filler_words(words: Vec<SourcedWord>, fillers: &BTreeSet<String>, report: &mut CleanReport) -> Vec<SourcedWord> {
    let before = words.len();
    let out: Vec<_> = words
        .into_iter()
        .filter(|w| !fillers.contains(&core_lower(&w.text)))
        .collect();
    report.removed_fillers += before - out.len();
    out
}

/// Collapse immediately repeated word n-grams (n <= 3, case-insensitive),
/// keeping the first occurrence, until no repetition remains.
fn collapse_repeats(mut words: Vec<SourcedWord>, report: &mut CleanReport) -> Vec<SourcedWord> {
    loop {
        let mut changed = false;
        let mut i = 0;
        while i < words.len() {
            let mut hit = None;
            for n in 1..=3 {
                if i + 2 * n > words.len() {
                    break;
                }
                let same = (0..n).all(|t| words[i + t].text.to_lowercase() == words[i + n + t].text.to_lowercase());
                if same {
                    hit = Some(n);
                    break;
                }
            }
            match hit {
                Some(n) => {
                    words.drain(i + n..i + 2 * n);
                    report.removed_repetitions += n;
                    changed = true;
                }
                None => i += 1,
            }
        }
        if !changed {
            return words;
        }
    }
}

fn normalize_symbol_words(words: Vec<SourcedWord>, strict: bool, report: &mut CleanReport) -> Vec<SourcedWord> {
    let mut out = Vec::with_capacity(words.len());
    for w in words {
        let text: String = w.text.chars().filter(|c| !SYMBOLS.contains(c)).collect();
        report.removed_symbols += w.text.chars().count() - text.chars().count();
        if text.is_empty() {
            continue;
        }
        let core: Vec<char> = text.chars().filter(|c| c.is_alphanumeric()).collect();
        if core.len() == 1 && core[0].is_alphabetic() {
            let keepable = matches!(core[0], 'a' | 'A' | 'I');
            if strict || !keepable {
                report.removed_symbols += 1;
                continue;
            }
            report.kept_short_words += 1;
        }
        out.push(SourcedWord { source: w.source, text });
    }
    out
}

/// The full cleaning pipeline on one utterance, iterated to a fixpoint so that
/// cleaning twice gives the same result as cleaning once.
pub fn clean_words(text: &str, opts: &CleanOptions, report: &mut CleanReport) -> CleanedText {
    let mut words = sourced(text);
    for _ in 0..8 {
        let before = words.clone();
        words = strip_comment_words(words, report);
        words = remove_filler_words(words, &opts.fillers, report);
        if opts.collapse_repetitions {
            words = collapse_repeats(words, report);
        }
        words = normalize_symbol_words(words, opts.strict_one_char, report);
        if words == before {
            break;
        }
    }
    CleanedText { words }
}

pub fn clean_text(text: &str, opts: &CleanOptions) -> String {
    clean_words(text, opts, &mut CleanReport::default()).text()
}

/// Remove `<...>` and `[...]` stage comments and transcriber notes.
pub fn strip_stage_comments(text: &str) -> String {
    join(&strip_comment_words(sourced(text), &mut CleanReport::default()))
}

/// Drop default filler words and collapse repeated n-grams.
pub fn remove_fillers_and_repetitions(text: &str) -> String {
    let opts = CleanOptions::default();
    let mut r = CleanReport::default();
    let words = remove_filler_words(sourced(text), &opts.fillers, &mut r);
    join(&collapse_repeats(words, &mut r))
}

/// Delete `@`, `_` and bracket characters, then one-character words other than "a" and "I".
pub fn normalize_symbols(text: &str) -> String {
    join(&normalize_symbol_words(sourced(text), false, &mut CleanReport::default()))
}

/// Smallest inclusive word range whose characters cover the half-open
/// character range `span` of `text`.
pub fn complete_partial_highlight(span: std::ops::Range<usize>, text: &str) -> Result<(usize, usize)> {
    let n_chars = text.chars().count();
    if span.start >= span.end || span.end > n_chars {
        return Err(Error::OutOfRange(format!(
            "character span {span:?} outside text of {n_chars} characters"
        )));
    }
    let mut hits = Vec::new();
    let mut word = 0usize;
    let mut in_word = false;
    for (ci, c) in text.chars().enumerate() {
        if c.is_whitespace() {
            if in_word {
                word += 1;
            }
            in_word = false;
            continue;
        }
        in_word = true;
        if span.contains(&ci) {
            hits.push(word);
        }
    }
    match (hits.first(), hits.last()) {
        (Some(&a), Some(&b)) => Ok((a, b)),
        _ => Err(Error::OutOfRange(format!("character span {span:?} covers no word"))),
    }
}

/// Merge consecutive spans separated by exactly one word when that word was
/// spoken by the speaker of either neighbouring span. Spans are inclusive
/// meeting-wide word ranges; `word_speakers[i]` is the speaker of word `i`.
pub fn merge_multi_span(spans: &[(usize, usize)], word_speakers: &[&str]) -> Result<Vec<(usize, usize)>> {
    for w in spans.windows(2) {
        if w[1].0 <= w[0].1 {
            return Err(Error::MalformedAnnotation(format!(
                "spans {:?} and {:?} overlap or are unsorted",
                w[0], w[1]
            )));
        }
    }
    if let Some(s) = spans.iter().find(|s| s.0 > s.1 || s.1 >= word_speakers.len()) {
        return Err(Error::MalformedAnnotation(format!("span {s:?} out of range")));
    }
    let mut out: Vec<(usize, usize)> = Vec::with_capacity(spans.len());
    for &s in spans {
        if let Some(prev) = out.last_mut() {
            if s.0 == prev.1 + 2 {
                let gap = word_speakers[prev.1 + 1];
                if gap == word_speakers[prev.1] || gap == word_speakers[s.0] {
                    prev.1 = s.1;
                    continue;
                }
            }
        }
        out.push(s);
    }
    Ok(out)
}

/// Keep only annotation words that come after `question_end`. Annotations left
/// with no words are removed; `None` when no annotation survives.
pub fn filter_annotations_after(
    question_end: WordRef,
    annotations: &[AnswerAnnotation],
) -> Option<Vec<AnswerAnnotation>> {
    let kept: Vec<AnswerAnnotation> = annotations
        .iter()
        .filter_map(|a| {
            if a.is_unanswerable {
                return Some(a.clone());
            }
            let spans: Vec<WordRange> = a
                .spans
                .iter()
                .filter_map(|r| {
                    if r.last() <= question_end {
                        None
                    } else if r.first() <= question_end {
                        Some(WordRange::new(r.utterance, question_end.word + 1, r.end))
                    } else {
                        Some(*r)
                    }
                })
                .collect();
            (!spans.is_empty()).then(|| AnswerAnnotation {
                judge_id: a.judge_id.clone(),
                is_unanswerable: false,
                spans,
            })
        })
        .collect();
    (!kept.is_empty()).then_some(kept)
}

/// Drop answers that lie before the question. The instance disappears when
/// every annotation pointed before it.
pub fn filter_pre_question_answers(instance: &QAInstance) -> Option<QAInstance> {
    let annotations = filter_annotations_after(instance.question_end(), &instance.annotations)?;
    let mut out = instance.clone();
    if annotations != instance.annotations {
        out.answerability = crate::transcript::derive_answerability_label(&annotations).ok()?;
        out.annotations = annotations;
    }
    Some(out)
}

/// Clean every utterance, carry questions and annotations through, then
/// (optionally) merge same-speaker runs, merge near-adjacent answer spans and
/// drop answers before their question.
pub fn preprocess_meeting(meeting: &Meeting, opts: &CleanOptions, report: &mut CleanReport) -> Meeting {
    let mut local = CleanReport::default();

    let cleaned: Vec<CleanedText> = meeting
        .utterances
        .iter()
        .map(|u| clean_words(&u.text, opts, &mut local))
        .collect();

    // Utterances emptied by cleaning are removed; old 1-based index -> new index.
    let mut new_index: BTreeMap<usize, usize> = BTreeMap::new();
    let mut out = Meeting {
        meeting_id: meeting.meeting_id.clone(),
        utterances: Vec::new(),
        questions: Vec::new(),
    };
    for (u, c) in meeting.utterances.iter().zip(&cleaned) {
        if c.words.is_empty() {
            local.warnings.push(format!(
                "{}: utterance {} empty after cleaning, removed",
                meeting.meeting_id, u.index
            ));
            continue;
        }
        let idx = out.utterances.len() + 1;
        new_index.insert(u.index, idx);
        out.utterances.push(crate::transcript::Utterance::new(idx, u.speaker.clone(), c.text()));
    }

    for (ordinal, q) in meeting.questions.iter().enumerate() {
        let qid = meeting.question_id(ordinal);
        let u = &meeting.utterances[q.utterance_index - 1];
        let c = &cleaned[q.utterance_index - 1];
        let located = locate_question(&u.text, &q.question_text)
            .and_then(|r| c.remap_range(r.start, r.end - 1))
            .zip(new_index.get(&q.utterance_index).copied());
        let Some(((qs, qe), qi)) = located else {
            local.warnings.push(format!("{qid}: question lost during cleaning, dropped"));
            local.dropped_instances += 1;
            continue;
        };
        let question_text = join(&c.words[qs..=qe]);
        if !question_text.ends_with('?') {
            local.warnings.push(format!("{qid}: question mark removed by cleaning, dropped"));
            local.dropped_instances += 1;
            continue;
        }
        let mut annotations = Vec::new();
        for a in &q.annotations {
            if a.is_unanswerable {
                annotations.push(a.clone());
                continue;
            }
            let spans: Vec<WordRange> = a
                .spans
                .iter()
                .filter_map(|r| {
                    let (s, e) = cleaned[r.utterance - 1].remap_range(r.start, r.end)?;
                    Some(WordRange::new(*new_index.get(&r.utterance)?, s, e))
                })
                .collect();
            if spans.is_empty() {
                local.removed_annotations += 1;
                local.warnings.push(format!("{qid}: answer of judge {} removed by cleaning", a.judge_id));
                continue;
            }
            annotations.push(AnswerAnnotation::answer(a.judge_id.clone(), spans));
        }
        if annotations.is_empty() {
            local.dropped_instances += 1;
            continue;
        }
        let mut nq = q.clone();
        nq.utterance_index = qi;
        nq.question_text = question_text;
        nq.annotations = annotations;
        out.questions.push(nq);
    }

    if opts.merge_utterances {
        out = merge_consecutive_utterances(&out);
    }

    // Multi-span merge in meeting-wide word coordinates.
    let offsets = out.word_offsets();
    let speakers: Vec<&str> = out
        .utterances
        .iter()
        .flat_map(|u| std::iter::repeat_n(u.speaker.as_str(), u.word_count()))
        .collect();
    let to_global = |r: &WordRange| (offsets[r.utterance - 1] + r.start, offsets[r.utterance - 1] + r.end);
    let to_local = |(s, e): (usize, usize)| -> Vec<WordRange> {
        let mut v = Vec::new();
        for (ui, &off) in offsets.iter().enumerate() {
            let n = out.utterances[ui].word_count();
            let (lo, hi) = (s.max(off), e.min(off + n - 1));
            if n > 0 && lo <= hi {
                v.push(WordRange::new(ui + 1, lo - off, hi - off));
            }
        }
        v
    };
    let mut questions = Vec::new();
    for (ordinal, q) in out.questions.iter().enumerate() {
        let mut q = q.clone();
        for a in &mut q.annotations {
            if a.spans.len() < 2 {
                continue;
            }
            let global: Vec<(usize, usize)> = a.spans.iter().map(to_global).collect();
            // Spans that touch across an utterance boundary are one span here.
            let mut joined: Vec<(usize, usize)> = Vec::new();
            for g in global {
                match joined.last_mut() {
                    Some(p) if g.0 <= p.1 + 1 => p.1 = p.1.max(g.1),
                    _ => joined.push(g),
                }
            }
            match merge_multi_span(&joined, &speakers) {
                Ok(merged) => {
                    local.merged_spans += joined.len() - merged.len();
                    a.spans = merged.into_iter().flat_map(to_local).collect();
                }
                Err(e) => local.warnings.push(format!("{}: {e}", out.question_id(ordinal))),
            }
        }
        let qu = &out.utterances[q.utterance_index - 1];
        let Some(r) = locate_question(&qu.text, &q.question_text) else {
            local.dropped_instances += 1;
            continue;
        };
        let qend = WordRef::new(q.utterance_index, r.end - 1);
        match filter_annotations_after(qend, &q.annotations) {
            Some(a) => {
                local.removed_annotations += q.annotations.len() - a.len();
                q.annotations = a;
                questions.push(q);
            }
            None => local.dropped_instances += 1,
        }
    }
    out.questions = questions;
    report.absorb(local);
    out
}
