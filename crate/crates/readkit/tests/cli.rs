mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use readkit::pipeline::read_predictions;
use readkit::squad::{read_squad, SquadVersion};
use readkit_core::eval::{evaluate, PredictionSet};

const CONFIG: &str = r#"
model = "drqa"
epochs = 2
batch_size = 5
hidden_size = 8
rnn_layers = 1
embedding_dim = 8
learning_rate = 0.01
ema_decay = 0.9
"#;

struct Fixture {
    dir: tempfile::TempDir,
    train: PathBuf,
    dev: PathBuf,
    config: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let train = common::write_json(&dir.path().join("train.json"), &common::synthetic_squad(15, 1));
    let dev = common::write_json(&dir.path().join("dev.json"), &common::synthetic_squad(6, 2));
    let config = dir.path().join("run.toml");
    std::fs::write(&config, CONFIG).unwrap();
    Fixture { dir, train, dev, config }
}

fn readkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_readkit"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn train(f: &Fixture, save: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train",
        "--config",
        s(&f.config),
        "--train-file",
        s(&f.train),
        "--dev-file",
        s(&f.dev),
        "--save-dir",
        s(save),
        "--seed",
        "3",
    ];
    args.extend_from_slice(extra);
    readkit(&args)
}

#[test]
fn train_writes_artifacts_and_is_deterministic() {
    let f = fixture();
    let (a, b) = (f.dir.path().join("a"), f.dir.path().join("b"));
    let out = train(&f, &a, &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["epochs"], 2);
    assert!(report["best"]["f1"].is_number());
    for name in ["best.ckpt", "last.ckpt", "summary.jsonl", "vocab.json", "tags.json", "config.toml"] {
        assert!(a.join(name).is_file(), "{name}");
    }
    let echoed = std::fs::read_to_string(a.join("config.toml")).unwrap();
    assert!(echoed.contains("seed = 3") && echoed.contains("model = \"drqa\""));

    assert!(train(&f, &b, &[]).status.success());
    let summary = |d: &Path| std::fs::read(d.join("summary.jsonl")).unwrap();
    assert_eq!(summary(&a), summary(&b));
    assert_eq!(std::fs::read(a.join("best.ckpt")).unwrap(), std::fs::read(b.join("best.ckpt")).unwrap());
}

#[test]
fn flags_override_config_file() {
    let f = fixture();
    let save = f.dir.path().join("m");
    let out = train(&f, &save, &["--epochs", "1", "--model", "bidaf", "--hidden-size", "4"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let echoed = std::fs::read_to_string(save.join("config.toml")).unwrap();
    assert!(echoed.contains("epochs = 1") && echoed.contains("model = \"bidaf\"") && echoed.contains("hidden_size = 4"));
    assert!(!save.join("tags.json").exists());
}

#[test]
fn exit_codes() {
    let f = fixture();
    let save = f.dir.path().join("x");
    let missing = f.dir.path().join("nope.txt");
    assert_eq!(train(&f, &save, &["--embedding-file", s(&missing)]).status.code(), Some(2));
    let bad_cfg = f.dir.path().join("bad.toml");
    std::fs::write(&bad_cfg, "epoch = 3\n").unwrap();
    assert_eq!(readkit(&["train", "--config", s(&bad_cfg)]).status.code(), Some(2));
    let broken = f.dir.path().join("broken.json");
    std::fs::write(&broken, "{\"data\": [").unwrap();
    let out = readkit(&[
        "train",
        "--config",
        s(&f.config),
        "--train-file",
        s(&broken),
        "--dev-file",
        s(&f.dev),
        "--save-dir",
        s(&save),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("broken.json"));
    assert_eq!(readkit(&["train", "--dropout", "1.5", "--train-file", s(&f.train), "--dev-file", s(&f.dev), "--save-dir", s(&save)]).status.code(), Some(2));
}

#[test]
fn pretrained_embedding_file() {
    let f = fixture();
    let vectors = f.dir.path().join("vec.txt");
    let mut text = String::from("3 8\n");
    for (i, w) in ["alice", "keeps", "garden"].iter().enumerate() {
        let row: Vec<String> = (0..8).map(|k| format!("{:.3}", (i * 8 + k) as f64 / 100.0)).collect();
        text.push_str(&format!("{w} {}\n", row.join(" ")));
    }
    std::fs::write(&vectors, text).unwrap();
    let save = f.dir.path().join("e");
    let out = train(&f, &save, &["--embedding-file", s(&vectors), "--epochs", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn scores(out: &Output) -> (f64, f64) {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
    assert_eq!(keys, ["exact_match", "f1"]);
    (v["exact_match"].as_f64().unwrap(), v["f1"].as_f64().unwrap())
}

#[test]
fn evaluate_prediction_files() {
    let f = fixture();
    let dev = read_squad(&f.dev, SquadVersion::V1).unwrap().instances;
    let gold: PredictionSet = dev.iter().map(|i| (i.qid.clone(), i.answer_text.clone())).collect();
    let wrong: PredictionSet = dev.iter().map(|i| (i.qid.clone(), "zzz qqq".to_string())).collect();
    let mut half = gold.clone();
    for (k, v) in half.iter_mut().take(3) {
        *v = format!("{v} {k} extra");
    }
    for (name, preds) in [("gold", &gold), ("wrong", &wrong), ("half", &half)] {
        let path = common::write_json(&f.dir.path().join(format!("{name}.json")), preds);
        let (em, f1) = scores(&readkit(&["evaluate", "--dev-file", s(&f.dev), "--predictions", s(&path)]));
        let lib = evaluate(&dev, preds);
        assert_eq!((em, f1), (lib.exact_match, lib.f1), "{name}");
        match name {
            "gold" => assert_eq!((em, f1), (100.0, 100.0)),
            "wrong" => assert_eq!((em, f1), (0.0, 0.0)),
            _ => assert!(em == 50.0 && f1 > 50.0 && f1 < 100.0),
        }
    }
}

#[test]
fn infer_and_evaluate_trained_model() {
    let f = fixture();
    let save = f.dir.path().join("m");
    assert!(train(&f, &save, &[]).status.success());
    let p1 = f.dir.path().join("p1.json");
    let p2 = f.dir.path().join("p2.json");
    for p in [&p1, &p2] {
        let out = readkit(&["infer", "--dev-file", s(&f.dev), "--save-dir", s(&save), "--predictions-out", s(p)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    let preds = read_predictions(&p1).unwrap();
    let dev = read_squad(&f.dev, SquadVersion::V1).unwrap().instances;
    assert_eq!(preds.len(), dev.len());
    for inst in &dev {
        let a = &preds[&inst.qid];
        assert!(!a.is_empty() && inst.context.contains(a.as_str()));
    }
    let (em, f1) = scores(&readkit(&["evaluate", "--dev-file", s(&f.dev), "--save-dir", s(&save)]));
    let lib = evaluate(&dev, &preds);
    assert_eq!((em, f1), (lib.exact_match, lib.f1));
    assert_eq!(readkit(&["infer", "--dev-file", s(&f.dev), "--save-dir", s(&f.dir.path().join("none")), "--predictions-out", s(&p1)]).status.code(), Some(2));
}

#[test]
fn resume_continues_from_last_checkpoint() {
    let f = fixture();
    let (full, split) = (f.dir.path().join("full"), f.dir.path().join("split"));
    assert!(train(&f, &full, &["--epochs", "2"]).status.success());
    assert!(train(&f, &split, &["--epochs", "1"]).status.success());
    let out = train(&f, &split, &["--epochs", "2", "--resume"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = |d: &Path| std::fs::read(d.join("summary.jsonl")).unwrap();
    assert_eq!(summary(&full), summary(&split));
}
