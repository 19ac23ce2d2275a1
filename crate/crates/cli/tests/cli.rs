//! End-to-end tests that drive the compiled binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_betarate"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run_in(dir, args);
    assert!(
        out.status.success(),
        "command {args:?} failed with {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

/// Exit code plus the `class` of the JSON error object on stderr.
fn failure(out: &Output) -> (i32, String) {
    assert!(!out.status.success(), "expected failure");
    let err: Value = serde_json::from_slice(&out.stderr).expect("stderr is a JSON error object");
    (out.status.code().expect("exit code"), err["error"]["class"].as_str().unwrap().to_string())
}

fn instance_line(id: &str, qid: &str, lalm: &str) -> String {
    format!(
        r#"{{"instance_id":"{id}","question_id":"{qid}","benchmark":"MMAU","modality":"speech","category":"conversation","lalm_id":"{lalm}","question":"what is heard","reference_answer":"a dog barks","candidate_answer":"a dog barking"}}"#
    )
}

fn rating_line(id: &str, rater: &str, rating: u8) -> String {
    format!(r#"{{"instance_id":"{id}","rater_id":"{rater}","source":"human","rating":{rating}}}"#)
}

fn judge_line(id: &str, judge: &str, rating: u8) -> String {
    format!(
        r#"{{"instance_id":"{id}","rater_id":"{judge}","source":"judge:{judge}","rating":{rating}}}"#
    )
}

fn prediction_line(id: &str, mu: f64, variance: f64) -> String {
    let (a, b) = (mu * 10.0, (1.0 - mu) * 10.0);
    format!(r#"{{"instance_id":"{id}","alpha":{a},"beta":{b},"mu":{mu},"variance":{variance}}}"#)
}

/// The overlap-driven corpus and training setup used across tests.
const PIPELINE_CONFIG: &str = r#"{
  "seed": 42,
  "include_question": false,
  "include_rationale": false,
  "encoder": { "ngram_orders": [1], "char_ngram_order": 0, "hash_dim": 65536, "embed_dim": 32 },
  "train": { "learning_rate": 2e-3, "batch_size": 64, "max_epochs": 200, "patience": 200, "hidden_dim": 32, "dev_snapshot": false },
  "synth": { "content_vocab_size": 12, "distractor_vocab_size": 8, "overlap_choices": [0, 1, 3, 5, 7, 8] }
}"#;

#[test]
fn pipeline_reaches_high_rank_correlation() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("config.json"), PIPELINE_CONFIG).unwrap();

    ok(dir, &["--config", "config.json", "synth", "--out", "corpus.jsonl"]);
    let corpus_bytes = fs::read(dir.join("corpus.jsonl")).unwrap();
    ok(dir, &["--config", "config.json", "split", "--instances", "corpus.jsonl", "--manifest", "manifest.json"]);
    ok(dir, &["--config", "config.json", "train", "--instances", "corpus.jsonl", "--manifest", "manifest.json", "--model", "model.bin"]);
    ok(dir, &["--config", "config.json", "predict", "--instances", "corpus.jsonl", "--model", "model.bin", "--manifest", "manifest.json", "--partition", "test", "--predictions", "preds.jsonl"]);
    let out = ok(dir, &["--config", "config.json", "evaluate", "--predictions", "preds.jsonl", "--instances", "corpus.jsonl", "--manifest", "manifest.json", "--partition", "test", "--report", "report.json"]);

    let report = stdout_json(&out);
    assert!(report["spearman"].as_f64().unwrap() >= 0.9, "report: {report}");
    assert!(report["mae_mu"].as_f64().unwrap() <= 0.1, "report: {report}");

    // Clamping: fit on dev predictions, apply to the test predictions, and
    // the clamped scores must still rank well.
    ok(dir, &["--config", "config.json", "predict", "--instances", "corpus.jsonl", "--model", "model.bin", "--predictions", "preds_all.jsonl"]);
    ok(dir, &["--config", "config.json", "clamp-fit", "--predictions", "preds_all.jsonl", "--instances", "corpus.jsonl", "--manifest", "manifest.json", "--clamp", "clamp.json"]);
    ok(dir, &["--config", "config.json", "clamp-apply", "--predictions", "preds.jsonl", "--clamp", "clamp.json", "--out", "preds_clamped.jsonl"]);
    let out = ok(dir, &["--config", "config.json", "evaluate", "--predictions", "preds_clamped.jsonl", "--instances", "corpus.jsonl", "--manifest", "manifest.json", "--partition", "test"]);
    let clamped = stdout_json(&out);
    assert!(clamped["spearman"].as_f64().unwrap() >= 0.9, "clamped report: {clamped}");

    let clamp_fit: Value =
        serde_json::from_str(&fs::read_to_string(dir.join("clamp.json")).unwrap()).unwrap();
    assert!(clamp_fit["objective"].as_f64().unwrap() >= clamp_fit["baseline"].as_f64().unwrap());

    // Every artifact names its producing run.
    let manifest: Value =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["provenance"]["seed"].as_u64(), Some(42));
    assert_eq!(manifest["provenance"]["tool_version"].as_str(), Some(env!("CARGO_PKG_VERSION")));
    let preds_text = fs::read_to_string(dir.join("preds.jsonl")).unwrap();
    let first: Value = serde_json::from_str(preds_text.lines().next().unwrap()).unwrap();
    assert!(first["provenance"]["config_hash"].is_string());
    let model_bytes = fs::read(dir.join("model.bin")).unwrap();
    assert!(model_bytes.windows(11).any(|w| w == b"config_hash"));
    // predict and evaluate ran with the same effective configuration, and
    // the hash ignores paths, so their stamps agree.
    assert_eq!(report["provenance"], first["provenance"]);

    // No command rewrites its inputs.
    assert_eq!(corpus_bytes, fs::read(dir.join("corpus.jsonl")).unwrap());
}

#[test]
fn rerunning_the_pipeline_reproduces_artifacts_byte_for_byte() {
    let config = r#"{
      "seed": 9,
      "encoder": { "ngram_orders": [1], "char_ngram_order": 0, "hash_dim": 4096, "embed_dim": 16 },
      "train": { "learning_rate": 2e-3, "max_epochs": 10, "patience": 10, "hidden_dim": 8, "dev_snapshot": false },
      "synth": { "questions": 60 }
    }"#;
    let run = |dir: &Path| {
        fs::write(dir.join("config.json"), config).unwrap();
        ok(dir, &["--config", "config.json", "synth", "--out", "corpus.jsonl"]);
        ok(dir, &["--config", "config.json", "split", "--instances", "corpus.jsonl", "--manifest", "manifest.json"]);
        ok(dir, &["--config", "config.json", "train", "--instances", "corpus.jsonl", "--manifest", "manifest.json", "--model", "model.bin"]);
        ok(dir, &["--config", "config.json", "predict", "--instances", "corpus.jsonl", "--model", "model.bin", "--predictions", "preds.jsonl"]);
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run(a.path());
    run(b.path());
    for name in ["corpus.jsonl", "manifest.json", "model.bin", "preds.jsonl"] {
        let left = fs::read(a.path().join(name)).unwrap();
        let right = fs::read(b.path().join(name)).unwrap();
        assert_eq!(left, right, "{name} differs between identical runs");
    }
}

#[test]
fn evaluate_rejects_mismatched_ids_without_a_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let mut corpus = String::new();
    for (i, rating) in [1u8, 3, 5].iter().enumerate() {
        corpus.push_str(&instance_line(&format!("i{i}"), &format!("q{i}"), "m0"));
        corpus.push('\n');
        corpus.push_str(&rating_line(&format!("i{i}"), "r0", *rating));
        corpus.push('\n');
    }
    fs::write(dir.join("corpus.jsonl"), corpus).unwrap();
    let preds: Vec<String> = ["i0", "i1", "ghost"]
        .iter()
        .enumerate()
        .map(|(i, id)| prediction_line(id, 0.2 + 0.3 * i as f64, 0.01))
        .collect();
    fs::write(dir.join("preds.jsonl"), preds.join("\n")).unwrap();

    let out = run_in(dir, &["evaluate", "--predictions", "preds.jsonl", "--instances", "corpus.jsonl", "--report", "report.json"]);
    let (code, class) = failure(&out);
    assert_eq!((code, class.as_str()), (4, "schema"));
    assert!(!dir.join("report.json").exists(), "failed evaluate must not write a report");
}

#[test]
fn agreement_reports_alpha_before_and_after_filtering() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let config = r#"{ "seed": 7, "synth": { "questions": 150, "flag_fraction": 0.1 } }"#;
    fs::write(dir.join("config.json"), config).unwrap();
    ok(dir, &["--config", "config.json", "synth", "--out", "corpus.jsonl"]);
    let out = ok(dir, &["--config", "config.json", "agreement", "--instances", "corpus.jsonl"]);
    let summary = stdout_json(&out);
    let before = summary["alpha_before"].as_f64().unwrap();
    let after = summary["alpha_after"].as_f64().unwrap();
    assert!(before.is_finite() && after.is_finite());
    assert!(
        after > before,
        "filtering flagged ratings should raise agreement: {before} -> {after}"
    );
    assert!(summary["instances_excluded"].as_u64().unwrap() > 0);
}

#[test]
fn failure_classes_map_to_distinct_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    let out = run_in(dir, &["train", "--instances", "nope.jsonl", "--manifest", "m.json", "--model", "m.bin"]);
    assert_eq!(failure(&out), (3, "missing_input".into()));

    fs::write(dir.join("bad.jsonl"), rating_line("x", "r", 9)).unwrap();
    let out = run_in(dir, &["agreement", "--instances", "bad.jsonl"]);
    assert_eq!(failure(&out), (4, "schema".into()));

    let out = run_in(dir, &["evaluate", "--predictions", "p.jsonl", "--instances", "c.jsonl", "--partition", "test"]);
    assert_eq!(failure(&out), (2, "config".into()));

    // Constant targets leave rank correlation undefined.
    let mut corpus = String::new();
    let mut preds = Vec::new();
    for i in 0..3 {
        corpus.push_str(&instance_line(&format!("i{i}"), &format!("q{i}"), "m0"));
        corpus.push('\n');
        corpus.push_str(&rating_line(&format!("i{i}"), "r0", 3));
        corpus.push('\n');
        preds.push(prediction_line(&format!("i{i}"), 0.2 + 0.3 * i as f64, 0.01));
    }
    fs::write(dir.join("const.jsonl"), corpus).unwrap();
    fs::write(dir.join("const_preds.jsonl"), preds.join("\n")).unwrap();
    let out = run_in(dir, &["evaluate", "--predictions", "const_preds.jsonl", "--instances", "const.jsonl"]);
    assert_eq!(failure(&out), (5, "undefined_metric".into()));
}

#[test]
fn fusion_weights_favor_the_accurate_judge() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let targets = [1u8, 2, 3, 4, 5, 1, 2, 3, 4, 5, 1, 2];
    let off = [5u8, 1, 1, 5, 3, 3, 5, 1, 3, 1, 5, 3];
    let mut corpus = String::new();
    let mut judge_a = String::new();
    let mut judge_b = String::new();
    for (i, (&t, &o)) in targets.iter().zip(&off).enumerate() {
        let id = format!("i{i}");
        corpus.push_str(&instance_line(&id, &format!("q{i}"), "m0"));
        corpus.push('\n');
        corpus.push_str(&rating_line(&id, "r0", t));
        corpus.push('\n');
        judge_a.push_str(&judge_line(&id, "a", t));
        judge_a.push('\n');
        judge_b.push_str(&judge_line(&id, "b", o));
        judge_b.push('\n');
    }
    fs::write(dir.join("corpus.jsonl"), corpus).unwrap();
    fs::write(dir.join("judge_a.jsonl"), judge_a).unwrap();
    fs::write(dir.join("judge_b.jsonl"), judge_b).unwrap();

    ok(dir, &["fuse-fit", "--judges", "judge_a.jsonl,judge_b.jsonl", "--instances", "corpus.jsonl", "--fusion", "fusion.json"]);
    let model: Value =
        serde_json::from_str(&fs::read_to_string(dir.join("fusion.json")).unwrap()).unwrap();
    let weights = model["weights"].as_array().unwrap();
    let wa = weights[0].as_f64().unwrap();
    let wb = weights[1].as_f64().unwrap();
    assert!(wa > 0.6 && wa > wb, "accurate judge should dominate: a={wa}, b={wb}");

    ok(dir, &["fuse-apply", "--judges", "judge_a.jsonl,judge_b.jsonl", "--fusion", "fusion.json", "--out", "fused.jsonl"]);
    let fused = fs::read_to_string(dir.join("fused.jsonl")).unwrap();
    let rows: Vec<Value> = fused
        .lines()
        .skip(1)
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(rows.len(), 12);
    for row in &rows {
        let score = row["score"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&score));
    }
}

#[test]
fn flags_override_config_values() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let config = r#"{ "seed": 1, "synth": { "questions": 12 } }"#;
    fs::write(dir.join("config.json"), config).unwrap();
    ok(dir, &["--config", "config.json", "synth", "--out", "corpus.jsonl"]);
    ok(dir, &["--config", "config.json", "--seed", "42", "split", "--instances", "corpus.jsonl", "--manifest", "manifest.json"]);
    let manifest: Value =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"].as_u64(), Some(42));
    assert_eq!(manifest["provenance"]["seed"].as_u64(), Some(42));
}
