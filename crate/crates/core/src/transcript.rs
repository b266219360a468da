//! Meetings, questions and answer annotations, plus the windowing that turns
//! an annotated question into a [`QAInstance`].
//!
//! All word coordinates are `(utterance, word)` pairs: the utterance is the
//! 1-based position in the meeting and the word is the 0-based index of a
//! whitespace-separated word inside that utterance's text.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One word of the transcript.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct WordRef {
    pub utterance: usize,
    pub word: usize,
}

impl WordRef {
    pub fn new(utterance: usize, word: usize) -> Self {
        Self { utterance, word }
    }
}

/// Inclusive word range inside a single utterance. Serialized as `[utt, start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "(usize, usize, usize)", into = "(usize, usize, usize)")]
pub struct WordRange {
    pub utterance: usize,
    pub start: usize,
    pub end: usize,
}

impl WordRange {
    pub fn new(utterance: usize, start: usize, end: usize) -> Self {
        Self { utterance, start, end }
    }

    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn words(&self) -> impl Iterator<Item = WordRef> + '_ {
        (self.start..=self.end).map(move |w| WordRef::new(self.utterance, w))
    }

    pub fn first(&self) -> WordRef {
        WordRef::new(self.utterance, self.start)
    }

    pub fn last(&self) -> WordRef {
        WordRef::new(self.utterance, self.end)
    }
}

impl From<(usize, usize, usize)> for WordRange {
    fn from((u, s, e): (usize, usize, usize)) -> Self {
        Self::new(u, s, e)
    }
}

impl From<WordRange> for (usize, usize, usize) {
    fn from(r: WordRange) -> Self {
        (r.utterance, r.start, r.end)
    }
}

/// Collapse a sorted word set into maximal per-utterance contiguous ranges.
pub fn ranges_from_words(words: &BTreeSet<WordRef>) -> Vec<WordRange> {
    let mut out: Vec<WordRange> = Vec::new();
    for w in words {
        match out.last_mut() {
            Some(r) if r.utterance == w.utterance && r.end + 1 == w.word => r.end = w.word,
            _ => out.push(WordRange::new(w.utterance, w.word, w.word)),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    #[serde(skip)]
    pub index: usize,
    pub speaker: String,
    pub text: String,
}

impl Utterance {
    pub fn new(index: usize, speaker: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            index,
            speaker: speaker.into(),
            text: text.into(),
        }
    }

    pub fn words(&self) -> Vec<&str> {
        self.text.split_whitespace().collect()
    }

    pub fn word_count(&self) -> usize {
        self.text.split_whitespace().count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerAnnotation {
    pub judge_id: String,
    #[serde(rename = "unanswerable", default)]
    pub is_unanswerable: bool,
    #[serde(default)]
    pub spans: Vec<WordRange>,
}

impl AnswerAnnotation {
    pub fn answer(judge_id: impl Into<String>, mut spans: Vec<WordRange>) -> Self {
        spans.sort();
        Self {
            judge_id: judge_id.into(),
            is_unanswerable: false,
            spans,
        }
    }

    pub fn unanswerable(judge_id: impl Into<String>) -> Self {
        Self {
            judge_id: judge_id.into(),
            is_unanswerable: true,
            spans: Vec::new(),
        }
    }

    /// Union of all marked words. Empty for an unanswerable annotation.
    pub fn word_set(&self) -> BTreeSet<WordRef> {
        self.spans.iter().flat_map(|r| r.words()).collect()
    }
}

/// An annotated question as stored in the ingestion format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub utterance_index: usize,
    pub question_text: String,
    pub annotations: Vec<AnswerAnnotation>,
    /// Fields this toolkit does not interpret (question-type labels and the like).
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl Question {
    pub fn new(
        utterance_index: usize,
        question_text: impl Into<String>,
        annotations: Vec<AnswerAnnotation>,
    ) -> Self {
        Self {
            utterance_index,
            question_text: question_text.into(),
            annotations,
            extra: serde_json::Map::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meeting {
    pub meeting_id: String,
    pub utterances: Vec<Utterance>,
    #[serde(default)]
    pub questions: Vec<Question>,
}

impl Meeting {
    /// Build a meeting from `(speaker, text)` pairs, numbering utterances from 1.
    pub fn from_turns<S: Into<String>, T: Into<String>>(
        meeting_id: impl Into<String>,
        turns: impl IntoIterator<Item = (S, T)>,
    ) -> Self {
        let utterances = turns
            .into_iter()
            .enumerate()
            .map(|(i, (s, t))| Utterance::new(i + 1, s, t))
            .collect();
        Self {
            meeting_id: meeting_id.into(),
            utterances,
            questions: Vec::new(),
        }
    }

    pub fn utterance(&self, index: usize) -> Option<&Utterance> {
        index.checked_sub(1).and_then(|i| self.utterances.get(i))
    }

    pub fn question_id(&self, ordinal: usize) -> String {
        format!("{}#{}", self.meeting_id, ordinal)
    }

    /// Renumber utterances, sort spans and check every structural invariant.
    pub fn validate(&mut self) -> Result<()> {
        for (i, u) in self.utterances.iter_mut().enumerate() {
            u.index = i + 1;
            if u.text.trim().is_empty() {
                return Err(Error::MalformedInput(format!(
                    "meeting {}: utterance {} has empty text",
                    self.meeting_id, u.index
                )));
            }
        }
        for q in &mut self.questions {
            if q.utterance_index == 0 || q.utterance_index > self.utterances.len() {
                return Err(Error::MalformedInput(format!(
                    "meeting {}: question refers to utterance {} of {}",
                    self.meeting_id,
                    q.utterance_index,
                    self.utterances.len()
                )));
            }
            if !q.question_text.trim_end().ends_with('?') {
                return Err(Error::MalformedInput(format!(
                    "meeting {}: question {:?} does not end with '?'",
                    self.meeting_id, q.question_text
                )));
            }
            for a in &mut q.annotations {
                a.spans.sort();
                if a.is_unanswerable != a.spans.is_empty() {
                    return Err(Error::MalformedAnnotation(format!(
                        "meeting {}: judge {} must either mark spans or flag the question unanswerable",
                        self.meeting_id, a.judge_id
                    )));
                }
                for r in &a.spans {
                    let n = self
                        .utterances
                        .get(r.utterance.wrapping_sub(1))
                        .map(|u| u.word_count())
                        .ok_or_else(|| {
                            Error::MalformedAnnotation(format!(
                                "meeting {}: span utterance {} out of range",
                                self.meeting_id, r.utterance
                            ))
                        })?;
                    if r.start > r.end || r.end >= n {
                        return Err(Error::MalformedAnnotation(format!(
                            "meeting {}: span {:?} outside utterance of {} words",
                            self.meeting_id, r, n
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Global (meeting-wide) position of each utterance's first word.
    pub fn word_offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.utterances
            .iter()
            .map(|u| {
                let o = acc;
                acc += u.word_count();
                o
            })
            .collect()
    }
}

/// Parse one JSONL record.
pub fn parse_meeting(line: &str) -> Result<Meeting> {
    let mut m: Meeting = serde_json::from_str(line)?;
    m.validate()?;
    Ok(m)
}

/// Read a JSONL file, one meeting per non-blank line. Errors cite the 1-based line.
pub fn read_meetings(path: impl AsRef<Path>) -> Result<Vec<Meeting>> {
    let file = std::fs::File::open(path.as_ref())?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let m = parse_meeting(&line)
            .map_err(|e| Error::MalformedInput(format!("line {}: {}", i + 1, e)))?;
        out.push(m);
    }
    Ok(out)
}

pub fn write_meetings(path: impl AsRef<Path>, meetings: &[Meeting]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
    for m in meetings {
        serde_json::to_writer(&mut w, m)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Merge runs of adjacent utterances by the same speaker. Texts are joined with
/// a single space; question and annotation coordinates move with their words.
pub fn merge_consecutive_utterances(meeting: &Meeting) -> Meeting {
    // old index (1-based) -> (new index, word offset inside the merged utterance)
    let mut map = Vec::with_capacity(meeting.utterances.len());
    let mut merged: Vec<Utterance> = Vec::new();
    for u in &meeting.utterances {
        let words: Vec<&str> = u.words();
        match merged.last_mut() {
            Some(last) if last.speaker == u.speaker => {
                let offset = last.word_count();
                map.push((last.index, offset));
                if !words.is_empty() {
                    last.text.push(' ');
                    last.text.push_str(&words.join(" "));
                }
            }
            _ => {
                let index = merged.len() + 1;
                map.push((index, 0));
                merged.push(Utterance::new(index, u.speaker.clone(), words.join(" ")));
            }
        }
    }
    let remap = |r: &WordRange| {
        let (idx, off) = map[r.utterance - 1];
        WordRange::new(idx, r.start + off, r.end + off)
    };
    let questions = meeting
        .questions
        .iter()
        .map(|q| {
            let mut q = q.clone();
            q.utterance_index = map[q.utterance_index - 1].0;
            for a in &mut q.annotations {
                a.spans = a.spans.iter().map(remap).collect();
            }
            q
        })
        .collect();
    Meeting {
        meeting_id: meeting.meeting_id.clone(),
        utterances: merged,
        questions,
    }
}

/// Sentence boundaries over a word list: a sentence ends at a word whose last
/// character is `.`, `?` or `!`, or at the end of the list.
pub fn sentences(words: &[&str]) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, w) in words.iter().enumerate() {
        if w.ends_with(['.', '?', '!']) {
            out.push(start..i + 1);
            start = i + 1;
        }
    }
    if start < words.len() {
        out.push(start..words.len());
    }
    out
}

/// Sentences that end in a question mark.
pub fn question_candidates(text: &str) -> Vec<String> {
    let words: Vec<&str> = text.split_whitespace().collect();
    sentences(&words)
        .into_iter()
        .filter(|r| words[r.end - 1].ends_with('?'))
        .map(|r| words[r].join(" "))
        .collect()
}

/// Word range `[start, end)` of `question` inside `text`. The first contiguous
/// whole-word match ending in `?` wins.
pub fn locate_question(text: &str, question: &str) -> Option<std::ops::Range<usize>> {
    let words: Vec<&str> = text.split_whitespace().collect();
    let q: Vec<&str> = question.split_whitespace().collect();
    if q.is_empty() || !q[q.len() - 1].ends_with('?') || q.len() > words.len() {
        return None;
    }
    (0..=words.len() - q.len())
        .find(|&s| words[s..s + q.len()] == q[..])
        .map(|s| s..s + q.len())
}

/// A contiguous run of words from one utterance, as it appears in a context window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowPiece {
    pub utterance: usize,
    pub speaker: String,
    /// Index of `words[0]` inside the source utterance.
    pub first_word: usize,
    pub words: Vec<String>,
}

impl WindowPiece {
    fn slice(u: &Utterance, range: std::ops::Range<usize>) -> Self {
        let words = u.words();
        Self {
            utterance: u.index,
            speaker: u.speaker.clone(),
            first_word: range.start,
            words: words[range].iter().map(|s| s.to_string()).collect(),
        }
    }

    fn whole(u: &Utterance) -> Self {
        Self::slice(u, 0..u.word_count())
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn text(&self) -> String {
        self.words.join(" ")
    }

    pub fn word_refs(&self) -> impl Iterator<Item = WordRef> + '_ {
        (0..self.words.len()).map(move |i| WordRef::new(self.utterance, self.first_word + i))
    }
}

/// Whether a question has an answer in the transcript after it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Answerability {
    Answerable,
    Unanswerable,
}

impl Answerability {
    /// The binary has-answer label: 1 for answerable.
    pub fn label(self) -> f64 {
        match self {
            Answerability::Answerable => 1.0,
            Answerability::Unanswerable => 0.0,
        }
    }
}

/// Majority answerability: unanswerable iff at least half of the judges said so.
pub fn derive_answerability_label(annotations: &[AnswerAnnotation]) -> Result<Answerability> {
    if annotations.is_empty() {
        return Err(Error::MissingAnnotation("no annotations for question".into()));
    }
    let unanswerable = annotations.iter().filter(|a| a.is_unanswerable).count();
    Ok(if 2 * unanswerable >= annotations.len() {
        Answerability::Unanswerable
    } else {
        Answerability::Answerable
    })
}

/// One question together with its context windows and gold annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAInstance {
    pub id: String,
    pub question_text: String,
    pub q_index: usize,
    pub question: WindowPiece,
    /// `u_{q-k} .. u_{q-1}` followed by the prefix of `u_q` (possibly empty).
    pub before_window: Vec<WindowPiece>,
    /// The suffix of `u_q` (possibly empty) followed by `u_{q+1} .. u_{q+l}`.
    pub after_window: Vec<WindowPiece>,
    pub annotations: Vec<AnswerAnnotation>,
    pub answerability: Answerability,
}

impl QAInstance {
    pub fn prefix(&self) -> &WindowPiece {
        self.before_window.last().expect("before window always holds the prefix")
    }

    pub fn suffix(&self) -> &WindowPiece {
        self.after_window.first().expect("after window always holds the suffix")
    }

    pub fn questioner(&self) -> &str {
        &self.question.speaker
    }

    /// Reassemble `u_q` from prefix, question and suffix.
    pub fn question_utterance_text(&self) -> String {
        [self.prefix(), &self.question, self.suffix()]
            .iter()
            .filter(|p| !p.is_empty())
            .map(|p| p.text())
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Last word of the question sentence.
    pub fn question_end(&self) -> WordRef {
        WordRef::new(self.q_index, self.question.first_word + self.question.words.len() - 1)
    }

    /// Words of the after window in reading order.
    pub fn after_words(&self) -> Vec<WordRef> {
        self.after_window.iter().flat_map(|p| p.word_refs()).collect()
    }
}

/// One [`QAInstance`] per annotated question, with windows of `k` utterances
/// before and `l` after, clipped at the meeting boundaries.
pub fn extract_question_instances(meeting: &Meeting, k: usize, l: usize) -> Result<Vec<QAInstance>> {
    if l < 1 {
        return Err(Error::Config("after-window size l must be at least 1".into()));
    }
    meeting
        .questions
        .iter()
        .enumerate()
        .map(|(ordinal, q)| {
            let u = meeting.utterance(q.utterance_index).ok_or_else(|| {
                Error::MalformedInput(format!(
                    "{}: utterance {} does not exist",
                    meeting.question_id(ordinal),
                    q.utterance_index
                ))
            })?;
            let span = locate_question(&u.text, &q.question_text).ok_or_else(|| {
                Error::MalformedInput(format!(
                    "{}: question {:?} not found in utterance {}",
                    meeting.question_id(ordinal),
                    q.question_text,
                    q.utterance_index
                ))
            })?;
            let n_words = u.word_count();
            let qi = q.utterance_index;

            let first_before = qi.saturating_sub(k).max(1);
            let mut before: Vec<WindowPiece> = (first_before..qi)
                .map(|i| WindowPiece::whole(meeting.utterance(i).unwrap()))
                .collect();
            before.push(WindowPiece::slice(u, 0..span.start));

            let last_after = (qi + l).min(meeting.utterances.len());
            let mut after = vec![WindowPiece::slice(u, span.end..n_words)];
            after.extend((qi + 1..=last_after).map(|i| WindowPiece::whole(meeting.utterance(i).unwrap())));

            let answerability = derive_answerability_label(&q.annotations)
                .map_err(|_| Error::MissingAnnotation(meeting.question_id(ordinal)))?;
            Ok(QAInstance {
                id: meeting.question_id(ordinal),
                question_text: q.question_text.split_whitespace().collect::<Vec<_>>().join(" "),
                q_index: qi,
                question: WindowPiece::slice(u, span),
                before_window: before,
                after_window: after,
                annotations: q.annotations.clone(),
                answerability,
            })
        })
        .collect()
}
