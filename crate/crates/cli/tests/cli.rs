use std::path::Path;

use meeqa_cli::{read_predictions, run, EXIT_DATA, EXIT_OK};

fn meeqa(args: &[&str]) -> i32 {
    run(std::iter::once("meeqa").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY: [&str; 12] = [
    "--epochs", "1", "--d-model", "8", "--layers", "1", "--heads", "2", "--d-ff", "8", "--max-len", "96",
];

#[test]
fn synth_train_predict_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("synth.jsonl");
    let ck = dir.path().join("model.json");
    let preds = dir.path().join("preds.jsonl");
    let report = dir.path().join("report.json");

    assert_eq!(meeqa(&["synth", "--output", s(&data), "--meetings", "12", "--seed", "3"]), EXIT_OK);
    let mut train = vec!["train", "--train", s(&data), "--checkpoint", s(&ck)];
    train.extend(TINY);
    assert_eq!(meeqa(&train), EXIT_OK);
    assert!(dir.path().join("model.json.vocab").exists());
    assert!(dir.path().join("model.json.history.json").exists());

    let code = meeqa(&["predict", "--checkpoint", s(&ck), "--data", s(&data), "--output", s(&preds)]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(read_predictions(&preds).unwrap().len(), 12);

    let code = meeqa(&["evaluate", "--predictions", s(&preds), "--gold", s(&data), "--report", s(&report)]);
    assert_eq!(code, EXIT_OK);
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["all"]["count"], 12);
    assert_eq!(r["per_question"].as_array().unwrap().len(), 12);
}

#[test]
fn baseline_and_human_comparable_modes() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("synth.jsonl");
    let report = dir.path().join("report.json");
    assert_eq!(meeqa(&["synth", "--output", s(&data), "--meetings", "20"]), EXIT_OK);
    for mode in ["standard", "human-comparable"] {
        let code = meeqa(&[
            "evaluate",
            "--baseline",
            "first-utterance",
            "--gold",
            s(&data),
            "--mode",
            mode,
            "--report",
            s(&report),
        ]);
        assert_eq!(code, EXIT_OK);
    }
}

#[test]
fn gridsearch_writes_leaderboard_and_best_config() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.jsonl");
    let dev = dir.path().join("dev.jsonl");
    let out = dir.path().join("grid");
    assert_eq!(meeqa(&["synth", "--output", s(&train), "--meetings", "8", "--seed", "1"]), EXIT_OK);
    assert_eq!(meeqa(&["synth", "--output", s(&dev), "--meetings", "6", "--seed", "2"]), EXIT_OK);
    let cfg = dir.path().join("grid.toml");
    std::fs::write(&cfg, "alpha_grid = [0.8]\nbeta_grid = [0.3]\ngamma_grid = [0.7, 0.8]\n").unwrap();
    let mut args = vec!["gridsearch", "--train", s(&train), "--dev", s(&dev), "--output-dir", s(&out)];
    args.extend(["--config", s(&cfg)]);
    args.extend(TINY);
    assert_eq!(meeqa(&args), EXIT_OK);
    let board: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("leaderboard.json")).unwrap()).unwrap();
    assert_eq!(board.as_array().unwrap().len(), 2);
    let best = meeqa_cli::RunConfig::from_file(out.join("best_config.toml")).unwrap();
    assert_eq!(best.epochs, 1);
    assert!(out.join("best_checkpoint.json.vocab").exists());
}

#[test]
fn agreement_on_identical_judges_is_one() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("synth.jsonl");
    assert_eq!(meeqa(&["synth", "--output", s(&data), "--meetings", "10"]), EXIT_OK);
    let out = meeqa_cli::cmd_agreement(&meeqa_cli::AgreementArgs {
        data,
        question_k: 1,
        window_after: 60,
    })
    .unwrap();
    assert_eq!(out.alpha, 1.0);
    assert_eq!(out.reference_alpha, 0.555);
}

#[test]
fn bad_inputs_exit_with_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.jsonl");
    let out = dir.path().join("out.jsonl");
    assert_eq!(meeqa(&["preprocess", "--input", s(&missing), "--output", s(&out)]), EXIT_DATA);

    let broken = dir.path().join("broken.jsonl");
    std::fs::write(&broken, "{\"meeting_id\": \"m\", \"utterances\": []}\nnot json\n").unwrap();
    assert_eq!(meeqa(&["preprocess", "--input", s(&broken), "--output", s(&out)]), EXIT_DATA);

    assert_eq!(meeqa(&["train", "--bogus-flag"]), EXIT_DATA);
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "epochz = 3\n").unwrap();
    let code = meeqa(&["train", "--train", s(&broken), "--checkpoint", s(&out), "--config", s(&cfg)]);
    assert_eq!(code, EXIT_DATA);
}
