//! Model input construction: speaker normalization, rendering of the two
//! text segments, tokenization and the `[CLS] S_B [SEP] S_A [SEP]` layout
//! with a token -> transcript-word map.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transcript::{Answerability, QAInstance, WindowPiece, WordRef};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "<unk>";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
/// Marks the start of an utterance; emitted before every speaker tag.
pub const UTTERANCE_MARK: &str = "&";

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const CLS_ID: usize = 2;
pub const SEP_ID: usize = 3;
pub const MARK_ID: usize = 4;

const SPECIALS: [&str; 5] = [PAD, UNK, CLS, SEP, UTTERANCE_MARK];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeakerMode {
    /// Speaker tag on every utterance.
    Original,
    /// Speaker tag only where the speaker changes.
    Switch,
}

impl FromStr for SpeakerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(SpeakerMode::Original),
            "switch" | "switch-speakers" => Ok(SpeakerMode::Switch),
            other => Err(Error::Config(format!("unknown speaker mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RepresentationMode {
    pub speaker_mode: SpeakerMode,
    /// Number of whole utterances before the question placed in `S_B`.
    pub question_k: usize,
}

impl RepresentationMode {
    pub fn new(speaker_mode: SpeakerMode, question_k: usize) -> Result<Self> {
        if question_k > 2 {
            return Err(Error::Config(format!("question_k must be 0, 1 or 2, got {question_k}")));
        }
        if question_k > 0 && speaker_mode == SpeakerMode::Original {
            return Err(Error::Config("previous utterances require the switch speaker mode".into()));
        }
        Ok(Self {
            speaker_mode,
            question_k,
        })
    }
}

impl Default for RepresentationMode {
    fn default() -> Self {
        Self {
            speaker_mode: SpeakerMode::Switch,
            question_k: 1,
        }
    }
}

pub fn speaker_token(z: usize) -> String {
    format!("SPEAKER_{z}")
}

/// Rename speakers to `SPEAKER_Z` by order of first appearance in the
/// instance's windows, with the questioner always `SPEAKER_0`.
pub fn normalize_speakers(instance: &QAInstance) -> QAInstance {
    let mut ids: HashMap<String, usize> = HashMap::new();
    ids.insert(instance.question.speaker.clone(), 0);
    let pieces = instance
        .before_window
        .iter()
        .chain(std::iter::once(&instance.question))
        .chain(&instance.after_window);
    for p in pieces {
        let next = ids.len();
        ids.entry(p.speaker.clone()).or_insert(next);
    }
    let rename = |p: &WindowPiece| WindowPiece {
        speaker: speaker_token(ids[&p.speaker]),
        ..p.clone()
    };
    QAInstance {
        question: rename(&instance.question),
        before_window: instance.before_window.iter().map(rename).collect(),
        after_window: instance.after_window.iter().map(rename).collect(),
        ..instance.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WordOrigin {
    SpeakerTag,
    Transcript(WordRef),
}

/// Rendered text of one segment with the origin of each whitespace word.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Segment {
    pub words: Vec<String>,
    pub origins: Vec<WordOrigin>,
}

impl Segment {
    pub fn text(&self) -> String {
        self.words.join(" ")
    }

    fn push_piece(&mut self, p: &WindowPiece, tagged: bool) {
        if tagged {
            self.words.push(format!("{}:", p.speaker));
            self.origins.push(WordOrigin::SpeakerTag);
        }
        for (w, r) in p.words.iter().zip(p.word_refs()) {
            self.words.push(w.clone());
            self.origins.push(WordOrigin::Transcript(r));
        }
    }
}

/// The two text segments `S_B` (context up to and including the question)
/// and `S_A` (text after the question).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedInput {
    pub before: Segment,
    pub after: Segment,
}

impl RenderedInput {
    /// Both segments joined by a literal `[SEP]`, for inspection.
    pub fn display(&self) -> String {
        format!("{} {} {}", self.before.text(), SEP, self.after.text())
    }
}

/// Render `S_B` and `S_A` from a speaker-normalized instance.
pub fn render_sequence(instance: &QAInstance, mode: RepresentationMode) -> RenderedInput {
    let n_prev = instance.before_window.len() - 1;
    let prev = &instance.before_window[n_prev.saturating_sub(mode.question_k)..n_prev];

    let mut question = instance.prefix().clone();
    question.words.extend(instance.question.words.iter().cloned());
    if question.words.len() == instance.question.words.len() {
        question.first_word = instance.question.first_word;
    }

    let mut last: Option<String> = None;
    let mut tag = |p: &WindowPiece| -> bool {
        let t = match mode.speaker_mode {
            SpeakerMode::Original => true,
            SpeakerMode::Switch => last.as_deref() != Some(p.speaker.as_str()),
        };
        last = Some(p.speaker.clone());
        t
    };

    let mut before = Segment::default();
    for p in prev.iter().chain(std::iter::once(&question)) {
        if p.is_empty() {
            continue;
        }
        let t = tag(p);
        before.push_piece(p, t);
    }
    let mut after = Segment::default();
    for p in &instance.after_window {
        if p.is_empty() {
            continue;
        }
        let t = tag(p);
        after.push_piece(p, t);
    }
    RenderedInput { before, after }
}

/// Lowercase, split on whitespace and detach every punctuation character as
/// its own token. `_` counts as a word character, so speaker tags stay whole.
/// The second vector maps each token to the index of its source word.
pub fn tokenize(text: &str) -> (Vec<String>, Vec<usize>) {
    let mut tokens = Vec::new();
    let mut map = Vec::new();
    for (wi, word) in text.split_whitespace().enumerate() {
        let mut cur = String::new();
        for c in word.chars() {
            if c.is_alphanumeric() || c == '_' {
                cur.extend(c.to_lowercase());
            } else {
                if !cur.is_empty() {
                    tokens.push(std::mem::take(&mut cur));
                    map.push(wi);
                }
                tokens.push(c.to_lowercase().collect());
                map.push(wi);
            }
        }
        if !cur.is_empty() {
            tokens.push(cur);
            map.push(wi);
        }
    }
    (tokens, map)
}

/// Token strings of a segment with per-token origin. Speaker tags are
/// preceded by the utterance mark.
pub fn segment_tokens(segment: &Segment) -> Vec<(String, Option<WordRef>)> {
    let mut out = Vec::new();
    for (w, origin) in segment.words.iter().zip(&segment.origins) {
        let (toks, _) = tokenize(w);
        match origin {
            WordOrigin::SpeakerTag => {
                out.push((UTTERANCE_MARK.to_string(), None));
                out.extend(toks.into_iter().map(|t| (t, None)));
            }
            WordOrigin::Transcript(r) => out.extend(toks.into_iter().map(|t| (t, Some(*r)))),
        }
    }
    out
}

/// Closed token vocabulary. Ids 0..5 are reserved for the special tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let index: HashMap<String, usize> = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        if index.len() != tokens.len() {
            return Err(Error::Config("duplicate token in vocabulary".into()));
        }
        if tokens.len() < SPECIALS.len() || tokens[..SPECIALS.len()] != SPECIALS {
            return Err(Error::Config("vocabulary must start with the special tokens".into()));
        }
        Ok(Self { tokens, index })
    }

    /// Build from token streams. Tokens seen fewer than `min_count` times map
    /// to `<unk>`; order is by descending count, then lexicographic.
    pub fn build<'a>(streams: impl IntoIterator<Item = &'a str>, min_count: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in streams {
            *counts.entry(t).or_default() += 1;
        }
        let mut entries: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_count && !SPECIALS.contains(t))
            .collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(entries.into_iter().map(|(t, _)| t.to_string()))
            .collect();
        Self::from_tokens(tokens).expect("specials are unique")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// One token per line; the line number is the id.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        for t in &self.tokens {
            writeln!(w, "{t}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegmentKind {
    Special,
    Before,
    After,
    Pad,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedInput {
    pub ids: Vec<usize>,
    pub segments: Vec<SegmentKind>,
    pub word_offsets: Vec<Option<WordRef>>,
    pub cls_index: usize,
    pub y_start: usize,
    pub y_end: usize,
    pub attention_mask: Vec<bool>,
    /// Some of `S_A` did not fit.
    pub truncated: bool,
    /// The gold start fell outside the kept tokens, so the targets point at `[CLS]`.
    pub gold_truncated: bool,
}

impl EncodedInput {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of non-pad positions; they always form a prefix.
    pub fn content_len(&self) -> usize {
        self.attention_mask.iter().take_while(|m| **m).count()
    }

    /// Positions a span head may point at: `[CLS]` and the `S_A` tokens.
    pub fn span_mask(&self) -> Vec<bool> {
        self.segments
            .iter()
            .enumerate()
            .map(|(i, s)| i == self.cls_index || *s == SegmentKind::After)
            .collect()
    }

    /// Positions eligible as answer candidates: `S_A` only.
    pub fn answer_mask(&self) -> Vec<bool> {
        self.segments.iter().map(|s| *s == SegmentKind::After).collect()
    }

    pub fn has_answer_target(&self) -> bool {
        self.y_start != self.cls_index
    }
}

/// Lay out `[CLS] S_B [SEP] S_A [SEP]` padded to `max_len`. `S_B` is kept whole;
/// the tail of `S_A` is truncated. Targets cover the gold words that survive
/// truncation and fall back to `[CLS]` when there is no gold or its first
/// word was cut.
pub fn assemble_input(
    rendered: &RenderedInput,
    gold: Option<&BTreeSet<WordRef>>,
    vocab: &Vocab,
    max_len: usize,
) -> Result<EncodedInput> {
    let before = segment_tokens(&rendered.before);
    let after = segment_tokens(&rendered.after);
    if before.len() + 3 > max_len {
        return Err(Error::QuestionTooLong {
            needed: before.len() + 3,
            available: max_len,
        });
    }
    let room = max_len - before.len() - 3;
    let truncated = after.len() > room;

    let mut rows: Vec<(usize, SegmentKind, Option<WordRef>)> = Vec::with_capacity(max_len);
    rows.push((CLS_ID, SegmentKind::Special, None));
    rows.extend(before.iter().map(|(t, o)| (vocab.id(t), SegmentKind::Before, *o)));
    rows.push((SEP_ID, SegmentKind::Special, None));
    rows.extend(after.iter().take(room).map(|(t, o)| (vocab.id(t), SegmentKind::After, *o)));
    rows.push((SEP_ID, SegmentKind::Special, None));
    let content = rows.len();
    rows.resize(max_len, (PAD_ID, SegmentKind::Pad, None));
    let ids: Vec<usize> = rows.iter().map(|r| r.0).collect();
    let segments: Vec<SegmentKind> = rows.iter().map(|r| r.1).collect();
    let offsets: Vec<Option<WordRef>> = rows.iter().map(|r| r.2).collect();

    let (mut y_start, mut y_end, mut gold_truncated) = (0, 0, false);
    if let Some(gold) = gold.filter(|g| !g.is_empty()) {
        let first = gold.iter().next().unwrap();
        let hits: Vec<usize> = (0..content)
            .filter(|&i| segments[i] == SegmentKind::After && offsets[i].is_some_and(|w| gold.contains(&w)))
            .collect();
        match (hits.first(), hits.last()) {
            (Some(&s), Some(&e)) if offsets[s] == Some(*first) => {
                y_start = s;
                y_end = e;
            }
            _ => gold_truncated = true,
        }
    }

    Ok(EncodedInput {
        attention_mask: (0..max_len).map(|i| i < content).collect(),
        ids,
        segments,
        word_offsets: offsets,
        cls_index: 0,
        y_start,
        y_end,
        truncated,
        gold_truncated,
    })
}

/// Transcript words covered by an inclusive token range inside `S_A`.
pub fn tokens_to_word_indices(encoded: &EncodedInput, start: usize, end: usize) -> Result<BTreeSet<WordRef>> {
    if start > end || end >= encoded.len() {
        return Err(Error::InvalidSpan(format!("token range {start}..={end}")));
    }
    if let Some(bad) = (start..=end).find(|&i| encoded.segments[i] != SegmentKind::After) {
        return Err(Error::InvalidSpan(format!(
            "token {bad} lies outside the after-question segment"
        )));
    }
    Ok((start..=end).filter_map(|i| encoded.word_offsets[i]).collect())
}

/// Every token of both segments, for vocabulary construction.
pub fn instance_tokens(instance: &QAInstance, mode: RepresentationMode) -> Vec<String> {
    let r = render_sequence(&normalize_speakers(instance), mode);
    segment_tokens(&r.before)
        .into_iter()
        .chain(segment_tokens(&r.after))
        .map(|(t, _)| t)
        .collect()
}

/// One encoded input plus its answerability label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledInput {
    pub input: EncodedInput,
    pub has_answer: bool,
}

/// Encode an instance for inference (targets at `[CLS]`).
pub fn encode_instance(
    instance: &QAInstance,
    mode: RepresentationMode,
    vocab: &Vocab,
    max_len: usize,
) -> Result<EncodedInput> {
    let r = render_sequence(&normalize_speakers(instance), mode);
    assemble_input(&r, None, vocab, max_len)
}

/// One training input per annotation. Each carries that judge's span and
/// answerability; a truncated gold keeps `has_answer = true`.
pub fn encode_training(
    instance: &QAInstance,
    mode: RepresentationMode,
    vocab: &Vocab,
    max_len: usize,
) -> Result<Vec<LabeledInput>> {
    let r = render_sequence(&normalize_speakers(instance), mode);
    instance
        .annotations
        .iter()
        .map(|a| {
            let gold = a.word_set();
            let input = assemble_input(&r, (!a.is_unanswerable).then_some(&gold), vocab, max_len)?;
            Ok(LabeledInput {
                input,
                has_answer: !a.is_unanswerable,
            })
        })
        .collect()
}

/// Majority-label variant used when a single input per question is wanted.
pub fn encode_majority(
    instance: &QAInstance,
    mode: RepresentationMode,
    vocab: &Vocab,
    max_len: usize,
) -> Result<LabeledInput> {
    let r = render_sequence(&normalize_speakers(instance), mode);
    let has_answer = instance.answerability == Answerability::Answerable;
    let gold = instance
        .annotations
        .iter()
        .find(|a| !a.is_unanswerable)
        .map(|a| a.word_set())
        .filter(|_| has_answer);
    Ok(LabeledInput {
        input: assemble_input(&r, gold.as_ref(), vocab, max_len)?,
        has_answer,
    })
}
