//! Train the toy model on a synthetic corpus with each objective and report
//! test scores. Settings are `key=value` arguments, e.g.
//!
//! `cargo run --release --example desk_scale -- epochs=12 objectives=fhl,no-ha,no-pse decoy=0`

use std::time::Instant;

use meeqa_core::decision::DecisionGrid;
use meeqa_core::evaluation::{evaluate, ScoringMode};
use meeqa_core::model::train::train_with;
use meeqa_core::model::{AdamWConfig, ModelConfig, ModelParams, Objective, TrainConfig};
use meeqa_core::pipeline::{build_vocab, encode_training_set, raw_predict, tune_decision, RawPrediction};
use meeqa_core::representation::RepresentationMode;
use meeqa_core::synthetic::{generate, SyntheticConfig};
use meeqa_core::transcript::{extract_question_instances, QAInstance};

fn main() -> meeqa_core::Result<()> {
    let args: std::collections::HashMap<String, String> = std::env::args()
        .skip(1)
        .filter_map(|a| a.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
        .collect();
    let get = |k: &str, d: &str| args.get(k).cloned().unwrap_or_else(|| d.to_string());
    let num = |k: &str, d: &str| -> f64 { get(k, d).parse().unwrap() };
    let epochs = num("epochs", "12") as usize;
    let lr = num("lr", "1e-3");
    let batch_size = num("batch", "8") as usize;
    let heads = num("heads", "4") as usize;
    let layers = num("layers", "2") as usize;
    let weight_decay = num("wd", "0.01");
    let objectives: Vec<Objective> = get("objectives", "fhl,no-ha").split(',').map(|o| o.parse().unwrap()).collect();
    let synth = SyntheticConfig {
        meetings: 2000,
        unanswerable_fraction: 0.3,
        seed: num("seed", "7") as u64,
        distractors: num("distractors", "0") as usize,
        judges: num("judges", "1") as usize,
        topics: num("topics", "4") as usize,
        after_utterances: num("after", "2") as usize,
        filler_vocab: num("filler_vocab", "40") as usize,
        decoy: num("decoy", "1") != 0.0,
        filler_words: (num("fill_lo", "1") as usize, num("fill_hi", "3") as usize),
        ..Default::default()
    };

    let meetings = generate(&synth)?;
    let instances: Vec<QAInstance> = meetings
        .iter()
        .map(|m| extract_question_instances(m, 1, 60))
        .collect::<meeqa_core::Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let (train_set, rest) = instances.split_at(1400);
    let (dev, test) = rest.split_at(300);
    let mode = RepresentationMode::default();
    let vocab = build_vocab(train_set, mode, 1);
    let max_len = 128;
    let data = encode_training_set(train_set, mode, &vocab, max_len)?;
    let lens: Vec<usize> = data.iter().map(|d| d.input.content_len()).collect();
    println!(
        "vocab {} inputs {} mean len {:.1}",
        vocab.len(),
        data.len(),
        lens.iter().sum::<usize>() as f64 / lens.len() as f64
    );

    for objective in objectives {
        let t0 = Instant::now();
        let cfg = TrainConfig {
            epochs,
            batch_size,
            objective,
            optimizer: AdamWConfig {
                lr,
                weight_decay,
                ..Default::default()
            },
            seed: 1,
            ..Default::default()
        };
        let init = ModelParams::init(
            ModelConfig {
                n_heads: heads,
                n_layers: layers,
                ..ModelConfig::new(vocab.len(), max_len)
            },
            1,
        )?;
        let (params, hist) = train_with(&data, init, &cfg, |e, l| {
            eprintln!("  epoch {} loss {l:.4} at {:.0}s", e + 1, t0.elapsed().as_secs_f64())
        })?;
        let raw = |set: &[QAInstance]| -> meeqa_core::Result<Vec<RawPrediction>> {
            set.iter().map(|i| raw_predict(&params, i, mode, &vocab)).collect()
        };
        let dev_raw = raw(dev)?;
        let test_raw = raw(test)?;
        let (dc, board) = tune_decision(&dev_raw, dev, &DecisionGrid::default())?;
        let recs = test_raw
            .iter()
            .map(|r| r.decide(&dc).map(|x| x.1))
            .collect::<meeqa_core::Result<Vec<_>>>()?;
        let rep = evaluate(&recs, test, ScoringMode::Standard)?;
        let yha = |ans: bool| {
            let v: Vec<f64> = test_raw
                .iter()
                .zip(test)
                .filter(|(_, i)| (i.answerability == meeqa_core::transcript::Answerability::Answerable) == ans)
                .map(|(r, _)| r.y_hat_ha)
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        println!(
            "{objective}: {:.1}s losses {:?}\n  decision {dc:?} dev board {:?}\n  mean y_ha ans {:.3} unans {:.3}\n{}",
            t0.elapsed().as_secs_f64(),
            hist.epoch_losses,
            board.iter().map(|b| b.1).collect::<Vec<_>>(),
            yha(true),
            yha(false),
            rep.table()
        );
    }
    Ok(())
}
