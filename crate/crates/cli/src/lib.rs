//! The `meeqa` command line: preprocessing, training, prediction, evaluation,
//! grid search and agreement statistics over meeting QA corpora.

pub mod config;

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use meeqa_core::decision::DecisionConfig;
use meeqa_core::evaluation::{corpus_alpha, evaluate, first_utterance_baseline, BaselineSpan, PredictionRecord, ScoringMode};
use meeqa_core::model::train::train_with;
use meeqa_core::model::{Checkpoint, ModelParams, Objective, TrainHistory};
use meeqa_core::pipeline::{build_vocab, encode_training_set, raw_predict, tune_decision, RawPrediction};
use meeqa_core::preprocess::{load_filler_lexicon, preprocess_meeting, CleanOptions, CleanReport};
use meeqa_core::representation::{SpeakerMode, Vocab};
use meeqa_core::synthetic::{generate, SyntheticConfig};
use meeqa_core::transcript::{extract_question_instances, read_meetings, write_meetings, QAInstance};
use meeqa_core::{Error, Result};
use rayon::prelude::*;
use serde::Serialize;

pub use config::RunConfig;

/// Reference agreement reported for the full annotated corpus.
pub const REFERENCE_ALPHA: f64 = 0.555;

pub const EXIT_OK: i32 = 0;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "meeqa", version, about = "Question answering over meeting transcripts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Clean transcripts and annotations.
    Preprocess(PreprocessArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Predict answers for every question of a corpus.
    Predict(PredictArgs),
    /// Score predictions against gold annotations.
    Evaluate(EvaluateArgs),
    /// Search loss weights and decision thresholds on a development set.
    Gridsearch(GridArgs),
    /// Inter-annotator agreement (Krippendorff's alpha).
    Agreement(AgreementArgs),
    /// Write a synthetic annotated corpus.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Where to write the cleaning report (JSON).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Filler lexicon, one word per line.
    #[arg(long)]
    pub fillers: Option<PathBuf>,
    #[arg(long)]
    pub no_merge: bool,
    #[arg(long)]
    pub keep_repetitions: bool,
    /// Drop every one-character word, including "a" and "I".
    #[arg(long)]
    pub strict_one_char: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SpeakerModeArg {
    Original,
    Switch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Fhl,
    NoHa,
    NoPse,
    NoLse,
}

impl From<LossArg> for Objective {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Fhl => Objective::Fhl,
            LossArg::NoHa => Objective::NoHa,
            LossArg::NoPse => Objective::NoPse,
            LossArg::NoLse => Objective::NoLse,
        }
    }
}

/// Settings shared by the model commands; each overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Flat TOML file with run settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub speaker_mode: Option<SpeakerModeArg>,
    #[arg(long)]
    pub question_k: Option<usize>,
    #[arg(long)]
    pub window_after: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub d_ff: Option<usize>,
    #[arg(long)]
    pub tau1: Option<f64>,
    #[arg(long)]
    pub tau2: Option<f64>,
    #[arg(long)]
    pub max_answer_len: Option<usize>,
}

impl Overrides {
    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { c.$f = v.into(); } )* };
        }
        set!(
            seed, question_k, window_after, max_len, alpha, beta, gamma, epochs, batch_size, lr, d_model, layers,
            heads, d_ff, tau1, tau2, max_answer_len
        );
        if let Some(m) = self.speaker_mode {
            c.speaker_mode = match m {
                SpeakerModeArg::Original => SpeakerMode::Original,
                SpeakerModeArg::Switch => SpeakerMode::Switch,
            };
        }
        if let Some(l) = self.loss {
            c.loss = l.into();
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Defaults to the checkpoint path with a `.vocab` extension.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Defaults to the checkpoint path with a `.history.json` extension.
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Standard,
    HumanComparable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineArg {
    /// The whole first utterance after the question.
    FirstUtterance,
    /// The rest of the question's own utterance.
    Suffix,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Predictions JSONL; not needed with --baseline.
    #[arg(long, required_unless_present = "baseline")]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long, value_enum, default_value = "standard")]
    pub mode: ModeArg,
    #[arg(long, value_enum)]
    pub baseline: Option<BaselineArg>,
    /// Write the full report (with per-question scores) here instead of stdout.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
    /// Directory for the leaderboard, best config and best checkpoint.
    #[arg(long)]
    pub output_dir: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct AgreementArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub question_k: usize,
    #[arg(long, default_value_t = 60)]
    pub window_after: usize,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub meetings: usize,
    #[arg(long, default_value_t = 0.3)]
    pub unanswerable_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub distractors: usize,
    #[arg(long, default_value_t = 3)]
    pub judges: usize,
    /// Put a negated marker and a fake answer into every unanswerable transcript.
    #[arg(long)]
    pub decoy: bool,
}

/// Map an error to the process exit code.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_numeric() {
        EXIT_NUMERIC
    } else {
        EXIT_DATA
    }
}

/// Parse `args` and run; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_DATA } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Preprocess(a) => cmd_preprocess(&a),
        Command::Train(a) => cmd_train(&a).map(|_| ()),
        Command::Predict(a) => cmd_predict(&a).map(|_| ()),
        Command::Evaluate(a) => cmd_evaluate(&a).map(|_| ()),
        Command::Gridsearch(a) => cmd_gridsearch(&a).map(|_| ()),
        Command::Agreement(a) => cmd_agreement(&a).map(|_| ()),
        Command::Synth(a) => cmd_synth(&a),
    }
}

/// Write to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|_| out.flush());
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn cmd_preprocess(a: &PreprocessArgs) -> Result<()> {
    let mut opts = CleanOptions {
        merge_utterances: !a.no_merge,
        collapse_repetitions: !a.keep_repetitions,
        strict_one_char: a.strict_one_char,
        ..Default::default()
    };
    if let Some(p) = &a.fillers {
        opts.fillers = load_filler_lexicon(p)?;
    }
    let meetings = read_meetings(&a.input)?;
    let mut report = CleanReport::default();
    let cleaned: Vec<_> = meetings.iter().map(|m| preprocess_meeting(m, &opts, &mut report)).collect();
    write_meetings(&a.output, &cleaned)?;
    if let Some(p) = &a.report {
        write_json(p, &report)?;
    }
    log::info!("preprocessed {} meetings into {}", cleaned.len(), a.output.display());
    Ok(())
}

/// Question instances of every meeting in a JSONL corpus.
pub fn load_instances(path: &Path, cfg: &RunConfig) -> Result<Vec<QAInstance>> {
    let mut out = Vec::new();
    for m in read_meetings(path)? {
        out.extend(extract_question_instances(&m, cfg.question_k, cfg.window_after)?);
    }
    Ok(out)
}

fn train_model(instances: &[QAInstance], cfg: &RunConfig) -> Result<(Checkpoint, Vocab, TrainHistory)> {
    let mode = cfg.representation()?;
    let vocab = build_vocab(instances, mode, cfg.min_count);
    let data = encode_training_set(instances, mode, &vocab, cfg.max_len)?;
    let tcfg = cfg.train_config()?;
    let init = ModelParams::init(cfg.model_config(vocab.len()), cfg.seed)?;
    log::info!(
        "training {} on {} inputs, {} parameters",
        tcfg.objective,
        data.len(),
        init.num_parameters()
    );
    let (params, history) = train_with(&data, init, &tcfg, |e, l| log::info!("epoch {}: loss {l:.6}", e + 1))?;
    Ok((Checkpoint::new(params, mode, tcfg), vocab, history))
}

pub fn cmd_train(a: &TrainArgs) -> Result<TrainHistory> {
    let cfg = a.overrides.resolve()?;
    let instances = load_instances(&a.train, &cfg)?;
    let (ck, vocab, history) = train_model(&instances, &cfg)?;
    ck.save(&a.checkpoint)?;
    vocab.save(a.vocab.clone().unwrap_or_else(|| with_suffix(&a.checkpoint, ".vocab")))?;
    write_json(
        &a.history.clone().unwrap_or_else(|| with_suffix(&a.checkpoint, ".history.json")),
        &history,
    )?;
    Ok(history)
}

/// Worker pool sized by `MEEQA_TOOLKIT_THREADS` when set.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("MEEQA_TOOLKIT_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| Error::Config(format!("MEEQA_TOOLKIT_THREADS must be a positive integer, got {v:?}")))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::Config(e.to_string()))
}

pub fn raw_predictions(ck: &Checkpoint, vocab: &Vocab, instances: &[QAInstance]) -> Result<Vec<RawPrediction>> {
    thread_pool()?.install(|| {
        instances
            .par_iter()
            .map(|i| raw_predict(&ck.params, i, ck.representation, vocab))
            .collect()
    })
}

pub fn decide_all(raw: &[RawPrediction], cfg: &DecisionConfig) -> Result<Vec<PredictionRecord>> {
    raw.iter().map(|r| r.decide(cfg).map(|x| x.1)).collect()
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::MalformedInput(format!("{} line {}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

pub fn cmd_predict(a: &PredictArgs) -> Result<Vec<PredictionRecord>> {
    let cfg = a.overrides.resolve()?;
    let ck = Checkpoint::load(&a.checkpoint)?;
    let vocab = Vocab::load(a.vocab.clone().unwrap_or_else(|| with_suffix(&a.checkpoint, ".vocab")))?;
    // The window sizes come from the run config; the representation from the checkpoint.
    let run = RunConfig {
        question_k: ck.representation.question_k,
        ..cfg.clone()
    };
    let instances = load_instances(&a.data, &run)?;
    let raw = raw_predictions(&ck, &vocab, &instances)?;
    let records = decide_all(&raw, &cfg.decision()?)?;
    write_predictions(&a.output, &records)?;
    log::info!("wrote {} predictions to {}", records.len(), a.output.display());
    Ok(records)
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<meeqa_core::evaluation::EvalReport> {
    let cfg = a.overrides.resolve()?;
    let gold = load_instances(&a.gold, &cfg)?;
    let predictions = match (a.baseline, &a.predictions) {
        (Some(b), _) => {
            let span = match b {
                BaselineArg::FirstUtterance => BaselineSpan::NextUtterance,
                BaselineArg::Suffix => BaselineSpan::Suffix,
            };
            gold.iter().map(|i| first_utterance_baseline(i, span)).collect()
        }
        (None, Some(p)) => read_predictions(p)?,
        (None, None) => return Err(Error::Config("--predictions or --baseline is required".into())),
    };
    let mode = match a.mode {
        ModeArg::Standard => ScoringMode::Standard,
        ModeArg::HumanComparable => ScoringMode::HumanComparable,
    };
    let report = evaluate(&predictions, &gold, mode)?;
    emit(&report.table());
    match &a.report {
        Some(p) => write_json(p, &report)?,
        None => {
            let summary = serde_json::json!({
                "mode": report.mode,
                "all": report.all,
                "has_ans": report.has_ans,
                "no_ans": report.no_ans,
            });
            emit(&(serde_json::to_string_pretty(&summary)? + "\n"));
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct LeaderboardEntry {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub max_answer_len: usize,
    pub dev_em: f64,
    pub dev_f1: f64,
}

/// Train once per loss-weight combination, tune the decision on dev, and
/// rank by dev All-Data F1.
pub fn cmd_gridsearch(a: &GridArgs) -> Result<Vec<LeaderboardEntry>> {
    let cfg = a.overrides.resolve()?;
    let train_set = load_instances(&a.train, &cfg)?;
    let dev = load_instances(&a.dev, &cfg)?;
    fs::create_dir_all(&a.output_dir)?;
    let mut board = Vec::new();
    let mut best: Option<(f64, Checkpoint, Vocab)> = None;
    for w in cfg.weight_grid()? {
        let run = RunConfig {
            alpha: w.alpha,
            beta: w.beta,
            gamma: w.gamma,
            ..cfg.clone()
        };
        let (ck, vocab, _) = train_model(&train_set, &run)?;
        let raw = raw_predictions(&ck, &vocab, &dev)?;
        let (dc, _) = tune_decision(&raw, &dev, &cfg.decision_grid())?;
        let report = evaluate(&decide_all(&raw, &dc)?, &dev, ScoringMode::Standard)?;
        log::info!("{w:?} {dc:?}: dev F1 {:.2}", report.all.f1);
        board.push(LeaderboardEntry {
            alpha: w.alpha,
            beta: w.beta,
            gamma: w.gamma,
            tau1: dc.tau1,
            tau2: dc.tau2,
            max_answer_len: dc.max_answer_len,
            dev_em: report.all.em,
            dev_f1: report.all.f1,
        });
        if best.as_ref().is_none_or(|b| report.all.f1 > b.0) {
            best = Some((report.all.f1, ck, vocab));
        }
    }
    board.sort_by(|x, y| y.dev_f1.total_cmp(&x.dev_f1));
    let top = &board[0];
    let best_cfg = RunConfig {
        alpha: top.alpha,
        beta: top.beta,
        gamma: top.gamma,
        tau1: top.tau1,
        tau2: top.tau2,
        max_answer_len: top.max_answer_len,
        ..cfg
    };
    write_json(&a.output_dir.join("leaderboard.json"), &board)?;
    fs::write(a.output_dir.join("best_config.toml"), best_cfg.to_toml())?;
    let (_, ck, vocab) = best.expect("grid is non-empty");
    let ck_path = a.output_dir.join("best_checkpoint.json");
    ck.save(&ck_path)?;
    vocab.save(with_suffix(&ck_path, ".vocab"))?;
    for e in &board {
        emit(&format!(
            "alpha={} beta={} gamma={} tau1={} tau2={} m={} dev EM {:.1} F1 {:.1}\n",
            e.alpha, e.beta, e.gamma, e.tau1, e.tau2, e.max_answer_len, e.dev_em, e.dev_f1
        ));
    }
    Ok(board)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementOutput {
    pub alpha: f64,
    pub reference_alpha: f64,
    pub questions: usize,
    pub units: usize,
}

pub fn cmd_agreement(a: &AgreementArgs) -> Result<AgreementOutput> {
    let cfg = RunConfig {
        question_k: a.question_k,
        window_after: a.window_after,
        ..Default::default()
    };
    let instances = load_instances(&a.data, &cfg)?;
    let r = corpus_alpha(&instances)?;
    let out = AgreementOutput {
        alpha: r.alpha,
        reference_alpha: REFERENCE_ALPHA,
        questions: r.questions,
        units: r.units,
    };
    emit(&format!(
        "Krippendorff's alpha {:.3} over {} questions ({} word units); reference {:.3}\n",
        out.alpha, out.questions, out.units, out.reference_alpha
    ));
    Ok(out)
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let meetings = generate(&SyntheticConfig {
        meetings: a.meetings,
        unanswerable_fraction: a.unanswerable_fraction,
        seed: a.seed,
        distractors: a.distractors,
        judges: a.judges,
        decoy: a.decoy,
        ..Default::default()
    })?;
    write_meetings(&a.output, &meetings)
}
