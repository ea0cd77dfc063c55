//! End-to-end tests of the `relex` binary: exit codes, file outputs, and
//! flag/config precedence.

use std::path::Path;
use std::process::{Command, Output};

fn relex(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relex"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary should start")
}

fn assert_code(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn gen_synth_is_deterministic_and_splits_80_10_10() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "gen-synth", "--out-dir", "a", "--num-docs", "100", "--doc-len", "12",
        "--vocab-size", "40", "--seed", "5",
    ];
    assert_code(&relex(&args, dir.path()), 0);
    let mut again = args;
    again[2] = "b";
    assert_code(&relex(&again, dir.path()), 0);

    for (name, want) in [("train.jsonl", 80), ("dev.jsonl", 10), ("test.jsonl", 10)] {
        let a = std::fs::read_to_string(dir.path().join("a").join(name)).unwrap();
        let b = std::fs::read_to_string(dir.path().join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
        assert_eq!(a.lines().count(), want, "{name} split size");
    }
}

#[test]
fn invalid_fraction_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = relex(&["gen-synth", "--positive-fraction", "2.0"], dir.path());
    assert_code(&out, 1);
    let out = relex(&["gen-synth", "--train-frac", "-0.1"], dir.path());
    assert_code(&out, 1);
}

#[test]
fn unknown_flags_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_code(&relex(&["gen-synth", "--frobnicate"], dir.path()), 1);
    assert_code(&relex(&["no-such-command"], dir.path()), 1);
    assert_code(&relex(&["--help"], dir.path()), 0);
    assert_code(&relex(&["train", "--help"], dir.path()), 0);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), "num_docs = 30\nseed = 5\ndoc_len = 12\n")
        .unwrap();
    // File alone: 30 documents.
    assert_code(
        &relex(&["gen-synth", "--out-dir", "f", "--config", "run.toml"], dir.path()),
        0,
    );
    let from_file = std::fs::read_to_string(dir.path().join("f/train.jsonl")).unwrap();
    assert_eq!(from_file.lines().count(), 24);
    // Flag beats file: 20 documents.
    assert_code(
        &relex(
            &["gen-synth", "--out-dir", "g", "--config", "run.toml", "--num-docs", "20"],
            dir.path(),
        ),
        0,
    );
    let from_flag = std::fs::read_to_string(dir.path().join("g/train.jsonl")).unwrap();
    assert_eq!(from_flag.lines().count(), 16);
}

#[test]
fn bad_config_values_are_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "num_docs = \"many\"\n").unwrap();
    assert_code(&relex(&["gen-synth", "--config", "bad.toml"], dir.path()), 2);
    assert_code(&relex(&["gen-synth", "--config", "absent.toml"], dir.path()), 2);
    assert_code(&relex(&["gen-synth", "--threads", "0"], dir.path()), 2);
}

fn make_corpus(dir: &Path) {
    let out = relex(
        &[
            "gen-synth", "--out-dir", "corpus", "--num-docs", "60", "--doc-len", "12",
            "--vocab-size", "40", "--relation-types", "2", "--seed", "9",
        ],
        dir,
    );
    assert_code(&out, 0);
}

fn train_quick(dir: &Path, epochs: &str, extra: &[&str]) -> Output {
    let mut args = vec![
        "train", "--train", "corpus/train.jsonl", "--dev", "corpus/dev.jsonl",
        "--out", "model.json", "--metrics", "metrics.jsonl",
        "--encoder", "bag", "--layers", "0", "--ffn-filters", "1",
        "--d-model", "8", "--proj-hidden", "6", "--proj-dim", "4",
        "--epochs", epochs, "--batch-size", "8", "--seed", "3",
    ];
    args.extend_from_slice(extra);
    relex(&args, dir)
}

#[test]
fn train_eval_score_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    make_corpus(dir.path());
    assert_code(&train_quick(dir.path(), "1", &[]), 0);
    assert!(dir.path().join("model.json").exists());

    // Metrics: one re + one ner row for the single epoch, with the
    // expected fields.
    let metrics = std::fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
    let rows: Vec<serde_json::Value> =
        metrics.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["epoch"], 0);
    assert_eq!(rows[0]["task"], "re");
    assert_eq!(rows[1]["task"], "ner");
    for key in ["loss", "dev_p", "dev_r", "dev_f1"] {
        assert!(rows[0][key].is_number(), "missing metric field {key}");
    }

    let out = relex(
        &["eval", "--checkpoint", "model.json", "--data", "corpus/test.jsonl", "--out", "report.json"],
        dir.path(),
    );
    assert_code(&out, 0);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    assert!(report["re"]["num_pairs"].as_u64().unwrap() > 0);
    assert!(report["re"]["report"]["macro_positive"]["f1"].is_number());
    assert!(report["ner"]["per_class"].is_array());

    let out = relex(
        &["score", "--checkpoint", "model.json", "--data", "corpus/test.jsonl"],
        dir.path(),
    );
    assert_code(&out, 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    let first: serde_json::Value = serde_json::from_str(stdout.lines().next().unwrap()).unwrap();
    for key in ["doc_id", "head_entity_id", "tail_entity_id", "gold", "predicted", "combined_scores"] {
        assert!(!first[key].is_null(), "prediction missing {key}");
    }
}

#[test]
fn zero_epochs_writes_an_untrained_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    make_corpus(dir.path());
    let out = train_quick(dir.path(), "0", &[]);
    assert_code(&out, 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("untrained"));
    let out = relex(
        &["eval", "--checkpoint", "model.json", "--data", "corpus/dev.jsonl"],
        dir.path(),
    );
    assert_code(&out, 0);
}

#[test]
fn missing_inputs_are_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    make_corpus(dir.path());
    let out = relex(
        &["eval", "--checkpoint", "nope.json", "--data", "corpus/dev.jsonl"],
        dir.path(),
    );
    assert_code(&out, 2);
    let out = relex(
        &[
            "train", "--train", "nope.jsonl", "--dev", "corpus/dev.jsonl",
            "--epochs", "0",
        ],
        dir.path(),
    );
    assert_code(&out, 2);
}

#[test]
fn divergence_exits_with_the_numeric_code() {
    let dir = tempfile::tempdir().unwrap();
    make_corpus(dir.path());
    let out = train_quick(
        dir.path(),
        "3",
        &["--learn-rate", "1e18", "--clip-norm", "1e18"],
    );
    assert_code(&out, 3);
}

#[test]
fn bench_emits_sizes_times_variants_times_repeats_records() {
    let dir = tempfile::tempdir().unwrap();
    let out = relex(
        &["bench", "--sizes", "8,12", "--repeats", "2", "--out", "bench.jsonl"],
        dir.path(),
    );
    assert_code(&out, 0);
    let lines = std::fs::read_to_string(dir.path().join("bench.jsonl")).unwrap();
    let records: Vec<serde_json::Value> =
        lines.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 2 * 2 * 2, "sizes x variants x repeats");
    assert!(records.iter().any(|r| r["variant"] == "naive"));
    assert!(records.iter().any(|r| r["variant"] == "efficient"));
    for rec in &records {
        assert!(rec["wall_time_ns"].as_u64().unwrap() > 0);
        assert!(rec["peak_aux_bytes"].as_u64().unwrap() > 0);
    }

    let out = relex(&["bench", "--sizes", "8", "--variant", "naive"], dir.path());
    assert_code(&out, 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().count(), 1);

    // The advertised default is also accepted explicitly.
    let out = relex(&["bench", "--sizes", "8", "--variant", "both"], dir.path());
    assert_code(&out, 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().count(), 2);
}

#[test]
fn alpha_tuning_selects_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    make_corpus(dir.path());
    let out = train_quick(
        dir.path(),
        "1",
        &["--tune-alpha", "rescore", "--alpha-sweep", "0,1"],
    );
    assert_code(&out, 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("selected alpha"), "stdout: {stdout}");
    let metrics = std::fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
    let rows: Vec<serde_json::Value> =
        metrics.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r["alpha"].is_number() && r["dev_f1"].is_number()));
}
