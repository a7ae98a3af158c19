//! End-to-end behavior of the `ara` binary.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use serde_json::Value;

use ara_core::autodiff::Tensor;
use ara_core::data::{
    read_conversations, read_jsonl, write_conversations, write_jsonl, Conversation, GroundTruth, Speaker, Utterance,
    UtteranceLabel,
};
use ara_core::model::{save_model, ImpactReport, ModelParams, UtteranceImpact, Variant};
use ara_core::sampling::{KeyRecord, Side};

fn ara(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ara")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Value {
    let out = ara(args);
    assert!(
        out.status.success(),
        "ara {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small synthetic dataset in `dir/synth`, split into train / dev / test.
fn small_dataset(dir: &Path) -> PathBuf {
    let synth = dir.join("synth");
    ok(&["synth", "--out-dir", p(&synth), "--n-conversations", "300", "--seed", "3"]);
    ok(&[
        "split",
        "--data",
        p(&synth.join("conversations.jsonl")),
        "--dev",
        "50",
        "--test",
        "50",
        "--seed",
        "3",
        "--out-dir",
        p(&synth),
    ]);
    synth
}

fn quick_config(dir: &Path) -> PathBuf {
    let path = dir.join("train.toml");
    fs::write(&path, "learning_rate = 0.01\nepochs = 3\n").unwrap();
    path
}

#[test]
fn synth_is_deterministic_and_defaults_to_2000() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["synth", "--out-dir", p(&a), "--seed", "7"]);
    let summary = ok(&["synth", "--out-dir", p(&b), "--seed", "7"]);
    assert_eq!(summary["conversations"], 2000);
    for file in ["conversations.jsonl", "embeddings.ueb", "truth.jsonl"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }
    assert_eq!(read_conversations(a.join("conversations.jsonl")).unwrap().len(), 2000);
    let manifest: Value = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "synth");
    assert_eq!(manifest["seed"], 7);
}

#[test]
fn noiseless_synth_rating_is_mean_impact() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["synth", "--out-dir", p(dir.path()), "--n-conversations", "100", "--noise", "0"]);
    let conversations = read_conversations(dir.path().join("conversations.jsonl")).unwrap();
    let truth: Vec<GroundTruth> = read_jsonl(dir.path().join("truth.jsonl")).unwrap();
    let impact: HashMap<&str, f64> = truth.iter().map(|t| (t.utterance_id.as_str(), t.impact)).collect();
    for c in &conversations {
        let n = c.utterances.len();
        let mean = (0..n).map(|i| impact[c.utterance_id(i).as_str()]).sum::<f64>() / n as f64;
        assert!((c.rating.unwrap() - mean.clamp(1.0, 5.0)).abs() < 1e-9, "{}", c.id);
    }
}

#[test]
fn train_score_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let synth = small_dataset(dir.path());
    let config = quick_config(dir.path());
    let emb = synth.join("embeddings.ueb");
    let model = dir.path().join("model.json");
    let summary = ok(&[
        "train",
        "--variant",
        "ara",
        "--data",
        p(&synth.join("train.jsonl")),
        "--dev",
        p(&synth.join("dev.jsonl")),
        "--embeddings",
        p(&emb),
        "--config",
        p(&config),
        "--out",
        p(&model),
    ]);
    assert_eq!(summary["epochs_run"], 3);
    assert!(dir.path().join("model.history.jsonl").exists());
    assert!(dir.path().join("model.manifest.json").exists());

    let test = synth.join("test.jsonl");
    let report = dir.path().join("report.jsonl");
    ok(&["score", "--model", p(&model), "--data", p(&test), "--embeddings", p(&emb), "--out", p(&report)]);
    let rows: Vec<ImpactReport> = read_jsonl(&report).unwrap();
    assert_eq!(rows.len(), 50);
    for row in &rows {
        let num: f64 = row.utterances.iter().map(|u| u.r * u.w).sum();
        let den: f64 = row.utterances.iter().map(|u| u.w).sum();
        assert!((row.q - num / den).abs() < 1e-9);
        for u in &row.utterances {
            assert!((u.s - u.r * u.w).abs() < 1e-12);
            assert!(u.w > 0.0 && u.w < 1.0);
        }
    }

    let metrics = ok(&[
        "eval",
        "--report",
        p(&report),
        "--report",
        p(&report),
        "--report",
        p(&report),
        "--data",
        p(&test),
        "--seeds",
        "1,2,3",
    ]);
    let per_seed = metrics["per_seed"].as_array().unwrap();
    assert_eq!(per_seed.len(), 3);
    assert_eq!(metrics["seeds"], serde_json::json!([1, 2, 3]));
    assert!(metrics["c_index"].as_f64().is_some());

    let trained = ok(&[
        "eval",
        "--variant",
        "nara",
        "--train",
        p(&synth.join("train.jsonl")),
        "--dev",
        p(&synth.join("dev.jsonl")),
        "--test",
        p(&test),
        "--embeddings",
        p(&emb),
        "--config",
        p(&config),
        "--seeds",
        "1,2",
    ]);
    assert_eq!(trained["per_seed"].as_array().unwrap().len(), 2);
    assert_eq!(trained["variant"], "nara");
}

#[test]
fn constant_model_scores_its_bias() {
    let dir = tempfile::tempdir().unwrap();
    let synth = small_dataset(dir.path());
    let mut params = ModelParams::init(Variant::Ara, 16, 8, 0).unwrap();
    params.set("rating.v", Tensor::zeros(&[16, 1])).unwrap();
    params.set("rating.b", Tensor::new(vec![1], vec![3.25]).unwrap()).unwrap();
    let model = dir.path().join("constant.json");
    save_model(&model, &params).unwrap();
    let report = dir.path().join("report.jsonl");
    ok(&[
        "score",
        "--model",
        p(&model),
        "--data",
        p(&synth.join("test.jsonl")),
        "--embeddings",
        p(&synth.join("embeddings.ueb")),
        "--out",
        p(&report),
    ]);
    let rows: Vec<ImpactReport> = read_jsonl(&report).unwrap();
    for row in &rows {
        assert!((row.q - 3.25).abs() < 1e-12);
        assert!(row.utterances.iter().all(|u| u.r == 3.25));
    }
}

#[test]
fn missing_embeddings_exit_2_naming_path() {
    let dir = tempfile::tempdir().unwrap();
    let synth = small_dataset(dir.path());
    let missing = dir.path().join("nowhere.ueb");
    let out = ara(&[
        "train",
        "--variant",
        "ara",
        "--data",
        p(&synth.join("train.jsonl")),
        "--dev",
        p(&synth.join("dev.jsonl")),
        "--embeddings",
        p(&missing),
        "--out",
        p(&dir.path().join("m.json")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.ueb"));
}

#[test]
fn warm_start_dimension_mismatch_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let synth = small_dataset(dir.path());
    let init = dir.path().join("wide.json");
    save_model(&init, &ModelParams::init(Variant::Ara, 32, 8, 0).unwrap()).unwrap();
    let out = ara(&[
        "train",
        "--variant",
        "ara",
        "--data",
        p(&synth.join("train.jsonl")),
        "--dev",
        p(&synth.join("dev.jsonl")),
        "--embeddings",
        p(&synth.join("embeddings.ueb")),
        "--init",
        p(&init),
        "--out",
        p(&dir.path().join("m.json")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("embed_dim"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(ara(&["train", "--variant", "bogus"]).status.code(), Some(2));
    assert_eq!(ara(&["frobnicate"]).status.code(), Some(2));
}

/// One conversation holding `scores.len()` labeled utterances and the matching report.
fn labeled_fixture(dir: &Path, scores: &[f64], issue: impl Fn(usize) -> bool) -> (PathBuf, PathBuf) {
    let conversation = Conversation {
        id: "c".into(),
        rating: Some(3.0),
        utterances: (0..scores.len())
            .map(|i| {
                let label = if issue(i) { UtteranceLabel::Bad } else { UtteranceLabel::Good };
                Utterance::new(Speaker::System, format!("u{i}")).labeled(label)
            })
            .collect(),
    };
    let report = ImpactReport {
        conversation_id: "c".into(),
        q: 3.0,
        utterances: scores.iter().enumerate().map(|(i, &s)| UtteranceImpact::new(i, s, 1.0)).collect(),
    };
    let (data, rep) = (dir.join("labeled.jsonl"), dir.join("labeled.report.jsonl"));
    write_conversations(&data, &[conversation]).unwrap();
    write_jsonl(&rep, &[report]).unwrap();
    (data, rep)
}

#[test]
fn eval_c_index_perfect_and_random() {
    let dir = tempfile::tempdir().unwrap();
    let ordered: Vec<f64> = (0..100).map(f64::from).collect();
    let (data, report) = labeled_fixture(dir.path(), &ordered, |i| i < 20);
    let m = ok(&["eval", "--report", p(&report), "--data", p(&data), "--metrics", "c-index"]);
    assert_eq!(m["c_index"], 1.0);

    let mut r = rand::rngs::StdRng::seed_from_u64(5);
    let random: Vec<f64> = (0..400).map(|_| r.random()).collect();
    let (data, report) = labeled_fixture(dir.path(), &random, |i| i % 5 == 0);
    let m = ok(&["eval", "--report", p(&report), "--data", p(&data), "--metrics", "c-index"]);
    let c = m["c_index"].as_f64().unwrap();
    assert!((0.45..=0.55).contains(&c), "{c}");
}

#[test]
fn c_index_without_labels_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let synth = small_dataset(dir.path());
    let model = dir.path().join("m.json");
    save_model(&model, &ModelParams::init(Variant::Ara, 16, 8, 0).unwrap()).unwrap();
    let test = synth.join("test.jsonl");
    let mut conversations = read_conversations(&test).unwrap();
    for u in conversations.iter_mut().flat_map(|c| c.utterances.iter_mut()) {
        u.label = None;
    }
    let unlabeled = dir.path().join("unlabeled.jsonl");
    write_conversations(&unlabeled, &conversations).unwrap();
    let report = dir.path().join("r.jsonl");
    let emb = synth.join("embeddings.ueb");
    ok(&["score", "--model", p(&model), "--data", p(&unlabeled), "--embeddings", p(&emb), "--out", p(&report)]);
    let out = ara(&["eval", "--report", p(&report), "--data", p(&unlabeled), "--metrics", "c-index"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("label"));
    // ratings are still there, so Pearson alone works
    ok(&["eval", "--report", p(&report), "--data", p(&unlabeled), "--metrics", "pearson"]);
}

fn write_judgments(path: &Path, key: &[KeyRecord], agree: usize) {
    let rows: Vec<Value> = key
        .iter()
        .enumerate()
        .map(|(i, k)| {
            let low = if k.model_low == Side::A { "a" } else { "b" };
            let high = if low == "a" { "b" } else { "a" };
            serde_json::json!({"pair_id": k.pair_id, "choice": if i < agree { low } else { high }})
        })
        .collect();
    write_jsonl(path, &rows).unwrap();
}

#[test]
fn pairs_then_judge() {
    let dir = tempfile::tempdir().unwrap();
    let synth = dir.path().join("synth");
    ok(&["synth", "--out-dir", p(&synth), "--n-conversations", "1000", "--seed", "1"]);
    let data = synth.join("conversations.jsonl");
    let emb = synth.join("embeddings.ueb");
    let model = dir.path().join("m.json");
    save_model(&model, &ModelParams::init(Variant::Ara, 16, 8, 1).unwrap()).unwrap();
    let report = dir.path().join("r.jsonl");
    ok(&["score", "--model", p(&model), "--data", p(&data), "--embeddings", p(&emb), "--out", p(&report)]);

    let out_dir = dir.path().join("pairs");
    let summary = ok(&[
        "pairs",
        "--report",
        p(&report),
        "--data",
        p(&data),
        "--embeddings",
        p(&emb),
        "--n",
        "300",
        "--k-fraction",
        "0.9",
        "--out-dir",
        p(&out_dir),
    ]);
    assert_eq!(summary["pairs"], 300);
    let presentation = fs::read_to_string(out_dir.join("presentation.jsonl")).unwrap();
    assert_eq!(presentation.lines().count(), 300);
    assert!(!presentation.contains("model_low"), "presentation must stay blind");
    let key: Vec<KeyRecord> = read_jsonl(out_dir.join("key.jsonl")).unwrap();
    assert_eq!(key.len(), 300);

    let too_many = ara(&[
        "pairs",
        "--report",
        p(&report),
        "--data",
        p(&data),
        "--embeddings",
        p(&emb),
        "--out-dir",
        p(&dir.path().join("x")),
    ]);
    assert_eq!(too_many.status.code(), Some(2));

    let key_path = out_dir.join("key.jsonl");
    let first100 = &key[..100];
    let short_key = dir.path().join("key100.jsonl");
    write_jsonl(&short_key, first100).unwrap();
    let (j1, j2, j3) = (dir.path().join("j1.jsonl"), dir.path().join("j2.jsonl"), dir.path().join("j3.jsonl"));
    write_judgments(&j1, first100, 77);
    write_judgments(&j2, first100, 78);
    write_judgments(&j3, &key, 300);
    let two = ok(&["judge", "--key", p(&short_key), "--judgments", p(&j1), "--judgments", p(&j2)]);
    assert!((two["average_accuracy"].as_f64().unwrap() - 0.775).abs() < 1e-12);
    let all = ok(&["judge", "--key", p(&key_path), "--judgments", p(&j3)]);
    assert_eq!(all["average_accuracy"], 1.0);
}
