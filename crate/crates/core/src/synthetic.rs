//! Seeded generator of small annotated meetings for tests and demos.
//!
//! Each meeting holds one question about a topic. For an answerable question
//! one utterance after it repeats the topic word, which acts as a marker,
//! followed by the answer. For an unanswerable question that marker is either
//! absent or, with decoys on, negated by a preceding "not". Optional
//! distractors put markers of other topics, each followed by a fake answer,
//! after every question.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transcript::{AnswerAnnotation, Meeting, Question, Utterance, WordRange};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub meetings: usize,
    pub unanswerable_fraction: f64,
    pub seed: u64,
    pub topics: usize,
    pub filler_vocab: usize,
    pub answer_vocab: usize,
    pub judges: usize,
    /// Utterances after the question.
    pub after_utterances: usize,
    /// Other-topic marker phrases placed after every question.
    pub distractors: usize,
    /// Give each unanswerable question its own topic's marker and a fake
    /// answer, negated by a preceding "not".
    pub decoy: bool,
    /// Inclusive range of filler words opening each utterance after the question.
    pub filler_words: (usize, usize),
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            meetings: 100,
            unanswerable_fraction: 0.3,
            seed: 0,
            topics: 4,
            filler_vocab: 40,
            answer_vocab: 40,
            judges: 3,
            after_utterances: 3,
            distractors: 0,
            decoy: false,
            filler_words: (3, 7),
        }
    }
}

const SPEAKERS: [&str; 5] = ["ALICE", "BOB", "CAROL", "DAVE", "ERIN"];

fn words(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

struct Lexicon {
    filler: Vec<String>,
    answers: Vec<String>,
}

impl Lexicon {
    fn filler(&self, rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
        (0..n).map(|_| self.filler.choose(rng).unwrap().clone()).collect()
    }
}

fn topic_word(t: usize) -> String {
    format!("topic{t}")
}

/// Meetings with exactly `round(meetings · unanswerable_fraction)` unanswerable questions.
pub fn generate(cfg: &SyntheticConfig) -> Result<Vec<Meeting>> {
    if !(0.0..=1.0).contains(&cfg.unanswerable_fraction) {
        return Err(Error::Config("unanswerable fraction must lie in [0, 1]".into()));
    }
    if cfg.topics == 0 || cfg.judges == 0 || cfg.after_utterances == 0 {
        return Err(Error::Config("synthetic corpus needs topics, judges and after utterances".into()));
    }
    if cfg.distractors >= cfg.topics || cfg.distractors >= cfg.after_utterances {
        return Err(Error::Config(
            "distractors must be fewer than both the topics and the after utterances".into(),
        ));
    }
    if cfg.filler_words.0 == 0 || cfg.filler_words.0 > cfg.filler_words.1 {
        return Err(Error::Config("filler word range must be non-empty and start at 1 or more".into()));
    }
    if cfg.filler_vocab == 0 || cfg.answer_vocab == 0 {
        return Err(Error::Config("synthetic vocabularies must be non-empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let lex = Lexicon {
        filler: words("w", cfg.filler_vocab),
        answers: words("a", cfg.answer_vocab),
    };
    let n_unans = (cfg.meetings as f64 * cfg.unanswerable_fraction).round() as usize;
    let mut unans: Vec<bool> = (0..cfg.meetings).map(|i| i < n_unans).collect();
    unans.shuffle(&mut rng);

    let mut out = Vec::with_capacity(cfg.meetings);
    for (m, &is_unans) in unans.iter().enumerate() {
        let mut speakers = SPEAKERS.to_vec();
        speakers.shuffle(&mut rng);
        let topic = rng.gen_range(0..cfg.topics);
        let mut turns: Vec<(String, String)> = Vec::new();

        let lead = rng.gen_range(1..=2);
        for i in 0..lead {
            let n = rng.gen_range(4..=8);
            turns.push((speakers[(i + 1) % 2 + 2].to_string(), lex.filler(&mut rng, n).join(" ") + "."));
        }
        let question = format!("what about {} ?", topic_word(topic));
        let n = rng.gen_range(1..=3);
        let opener = lex.filler(&mut rng, n).join(" ");
        turns.push((speakers[0].to_string(), format!("{opener}. {question}")));
        let q_index = turns.len();

        // Slot 0 of `placed` holds the true marker, the rest distractors.
        let mut slots: Vec<usize> = (0..cfg.after_utterances).collect();
        slots.shuffle(&mut rng);
        let mut others: Vec<usize> = (0..cfg.topics).filter(|&t| t != topic).collect();
        others.shuffle(&mut rng);
        let mut placed: Vec<Option<usize>> = vec![None; cfg.after_utterances];
        if !is_unans {
            placed[slots[0]] = Some(topic);
        }
        let decoy_slot = (is_unans && cfg.decoy).then(|| {
            placed[slots[0]] = Some(topic);
            slots[0]
        });
        for d in 0..cfg.distractors {
            placed[slots[1 + d]] = Some(others[d]);
        }
        let mut answer_range = None;
        for (i, marker) in placed.iter().enumerate() {
            let speaker = speakers[1 + i % 2].to_string();
            let n = rng.gen_range(cfg.filler_words.0..=cfg.filler_words.1);
            let mut ws = lex.filler(&mut rng, n);
            if let Some(t) = *marker {
                if decoy_slot == Some(i) {
                    ws.push("not".into());
                }
                ws.push(topic_word(t));
                let first = ws.len();
                let len = rng.gen_range(1..=3);
                for _ in 0..len {
                    ws.push(lex.answers.choose(&mut rng).unwrap().clone());
                }
                if t == topic && decoy_slot.is_none() {
                    answer_range = Some((q_index + 1 + i, first, first + len - 1));
                }
                if rng.gen_bool(0.5) {
                    ws.push("and".into());
                    let n = rng.gen_range(1..=3);
                    ws.extend(lex.filler(&mut rng, n));
                }
            }
            let last = ws.pop().unwrap();
            ws.push(last + ".");
            turns.push((speaker, ws.join(" ")));
        }
        let annotations = (0..cfg.judges)
            .map(|j| {
                let judge = format!("judge{j}");
                match answer_range {
                    Some((u, s, e)) => AnswerAnnotation::answer(judge, vec![WordRange::new(u, s, e)]),
                    None => AnswerAnnotation::unanswerable(judge),
                }
            })
            .collect();
        let utterances = turns
            .into_iter()
            .enumerate()
            .map(|(i, (s, t))| Utterance::new(i + 1, s, t))
            .collect();
        let mut meeting = Meeting {
            meeting_id: format!("syn{m:05}"),
            utterances,
            questions: vec![Question::new(q_index, question, annotations)],
        };
        meeting.validate()?;
        out.push(meeting);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transcript::{extract_question_instances, Answerability};

    #[test]
    fn deterministic_with_exact_unanswerable_share() {
        let cfg = SyntheticConfig {
            meetings: 40,
            unanswerable_fraction: 0.25,
            ..Default::default()
        };
        let a = generate(&cfg).unwrap();
        assert_eq!(a, generate(&cfg).unwrap());
        let insts: Vec<_> = a.iter().flat_map(|m| extract_question_instances(m, 1, 60).unwrap()).collect();
        assert_eq!(insts.len(), 40);
        let unans = insts.iter().filter(|i| i.answerability == Answerability::Unanswerable).count();
        assert_eq!(unans, 10);
    }

    #[test]
    fn answers_follow_the_topic_marker() {
        let cfg = SyntheticConfig {
            meetings: 30,
            distractors: 2,
            ..Default::default()
        };
        for m in generate(&cfg).unwrap() {
            let q = &m.questions[0];
            let topic = q.question_text.split(' ').nth(2).unwrap().to_string();
            let text: Vec<String> = m.utterances[q.utterance_index..]
                .iter()
                .flat_map(|u| u.words().into_iter().map(String::from).collect::<Vec<_>>())
                .collect();
            let has_marker = text.contains(&topic);
            let ann = &q.annotations[0];
            assert_eq!(has_marker, !ann.is_unanswerable);
            if let Some(r) = ann.spans.first() {
                let u = m.utterance(r.utterance).unwrap();
                assert_eq!(u.words()[r.start - 1], topic);
            }
        }
    }

    #[test]
    fn decoys_negate_the_asked_marker() {
        let cfg = SyntheticConfig {
            meetings: 40,
            decoy: true,
            ..Default::default()
        };
        for m in generate(&cfg).unwrap() {
            let q = &m.questions[0];
            let topic = q.question_text.split(' ').nth(2).unwrap();
            let after: Vec<&str> = m.utterances[q.utterance_index..].iter().flat_map(|u| u.words()).collect();
            let negated = after.windows(2).any(|w| w == ["not", topic]);
            assert!(after.contains(&topic));
            assert_eq!(negated, q.annotations[0].is_unanswerable);
        }
    }
}
