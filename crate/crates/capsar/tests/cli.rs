//! End-to-end tests of the `capsar` binary: each test runs the real
//! executable against the bundled synthetic corpus and checks artifacts,
//! exit codes, and stream separation.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/synthetic_train.tsv")
}

/// The bundled run config, rewritten with an absolute train path and the
/// given output directory so the test does not depend on its working
/// directory.
fn write_config(dir: &Path, out: &Path, extra: &str) -> PathBuf {
    let text = format!(
        "d_x = 12\nt_max = 8\ngru_hidden = 6\nconv_kernel = 3\nconv_channels = 6\n\
         primary_count = 12\nprimary_dim = 4\ninter_count = 4\ninter_dim = 6\n\
         sentiment_count = 3\nsentiment_dim = 8\nrouting_iters = 3\ndropout = 0.0\n\
         lambda = 2.0\ntrain = {}\nformat = tsv\nseed = 0\nepochs = 200\n\
         batch_size = 4\nlearning_rate = 0.01\nout = {}\n{extra}",
        corpus().display(),
        out.display()
    );
    let path = dir.join("run.conf");
    std::fs::write(&path, text).unwrap();
    path
}

fn capsar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_capsar"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout_of(output: &Output) -> String {
    String::from_utf8(output.stdout.clone()).unwrap()
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8(output.stderr.clone()).unwrap()
}

/// Trains into `out` and returns the path of the final checkpoint.
fn train_fixture(dir: &TempDir) -> PathBuf {
    let out = dir.path().join("run");
    let config = write_config(dir.path(), &out, "");
    let output = capsar(&["train", config.to_str().unwrap()]);
    assert!(output.status.success(), "{}", stderr_of(&output));
    out.join("final.cpsr")
}

#[test]
fn train_writes_checkpoints_and_history_reaching_full_accuracy() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("run");
    let config = write_config(dir.path(), &out, "");
    let output = capsar(&["train", config.to_str().unwrap()]);
    assert!(output.status.success(), "{}", stderr_of(&output));

    assert!(out.join("best.cpsr").exists());
    assert!(out.join("final.cpsr").exists());
    let history = std::fs::read_to_string(out.join("history.csv")).unwrap();
    let mut lines = history.lines();
    assert_eq!(
        lines.next().unwrap(),
        "epoch,train_loss,dev_accuracy,dev_macro_f1"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 200);
    let last: Vec<&str> = rows.last().unwrap().split(',').collect();
    assert_eq!(last[0], "200");
    assert_eq!(last[2].parse::<f64>().unwrap(), 1.0);

    // Progress is diagnostics: per-epoch lines belong on stderr, not stdout.
    assert!(stderr_of(&output).contains("train loss"));
    assert!(!stdout_of(&output).contains("train loss"));
    assert!(stdout_of(&output).contains("best epoch"));
}

#[test]
fn train_same_seed_writes_identical_artifacts() {
    let dir = TempDir::new().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let config_a = write_config(&dir.path().join("."), &out_a, "");
    let output = capsar(&["train", config_a.to_str().unwrap()]);
    assert!(output.status.success(), "{}", stderr_of(&output));
    let output = capsar(&["train", config_a.to_str().unwrap(), "--out", out_b.to_str().unwrap()]);
    assert!(output.status.success(), "{}", stderr_of(&output));

    for name in ["best.cpsr", "final.cpsr", "history.csv"] {
        let a = std::fs::read(out_a.join(name)).unwrap();
        let b = std::fs::read(out_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between same-seed runs");
    }
}

#[test]
fn unknown_config_key_fails_naming_it() {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("bad.conf");
    std::fs::write(&config, "lerning_rate = 0.1\n").unwrap();
    let output = capsar(&["train", config.to_str().unwrap()]);
    assert!(!output.status.success());
    assert!(stderr_of(&output).contains("lerning_rate"));
}

#[test]
fn missing_train_file_fails_naming_the_path() {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("gone.conf");
    std::fs::write(&config, "train = /no/such/corpus.tsv\nformat = tsv\n").unwrap();
    let output = capsar(&["train", config.to_str().unwrap()]);
    assert!(!output.status.success());
    assert!(stderr_of(&output).contains("/no/such/corpus.tsv"));
}

#[test]
fn missing_embeddings_warns_and_still_trains() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("run");
    let config = write_config(
        dir.path(),
        &out,
        "embeddings = /no/such/table.vec\nepochs = 1\n",
    );
    // The config builder rejects duplicate keys, so drop the base epochs line.
    let text = std::fs::read_to_string(&config).unwrap();
    std::fs::write(&config, text.replace("epochs = 200\n", "")).unwrap();

    let output = capsar(&["train", config.to_str().unwrap()]);
    assert!(output.status.success(), "{}", stderr_of(&output));
    let stderr = stderr_of(&output);
    assert!(stderr.contains("cannot read embeddings"), "{stderr}");
    assert!(stderr.contains("/no/such/table.vec"), "{stderr}");
    assert!(out.join("final.cpsr").exists());
}

#[test]
fn eval_reports_metrics_and_writes_csv() {
    let dir = TempDir::new().unwrap();
    let checkpoint = train_fixture(&dir);
    let csv = dir.path().join("eval.csv");
    let output = capsar(&[
        "eval",
        checkpoint.to_str().unwrap(),
        corpus().to_str().unwrap(),
        "--format",
        "tsv",
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{}", stderr_of(&output));
    let stdout = stdout_of(&output);
    assert!(stdout.contains("accuracy    1.0000"), "{stdout}");
    assert!(stdout.contains("negative"), "{stdout}");

    let csv_text = std::fs::read_to_string(&csv).unwrap();
    assert!(csv_text.starts_with("metric,class,value\n"));
    assert!(csv_text.contains("accuracy,,1\n"), "{csv_text}");
    assert!(csv_text.contains("support,neutral,6\n"), "{csv_text}");

    // Evaluation is deterministic: a second run reproduces the report and
    // the CSV byte for byte.
    let again = capsar(&[
        "eval",
        checkpoint.to_str().unwrap(),
        corpus().to_str().unwrap(),
        "--format",
        "tsv",
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(again.stdout, output.stdout);
    assert_eq!(std::fs::read_to_string(&csv).unwrap(), csv_text);
}

#[test]
fn eval_on_aspect_free_corpus_exits_nonzero() {
    let dir = TempDir::new().unwrap();
    let checkpoint = train_fixture(&dir);
    let empty = dir.path().join("empty.tsv");
    std::fs::write(&empty, "a sentence with no aspects\n").unwrap();
    let output = capsar(&[
        "eval",
        checkpoint.to_str().unwrap(),
        empty.to_str().unwrap(),
        "--format",
        "tsv",
    ]);
    assert!(!output.status.success());
    assert!(stderr_of(&output).contains("no usable evaluation examples"));
}

#[test]
fn detect_prints_capsules_metrics_and_heatmap() {
    let dir = TempDir::new().unwrap();
    let checkpoint = train_fixture(&dir);
    let heatmap = dir.path().join("heatmap.csv");
    let output = capsar(&[
        "detect",
        checkpoint.to_str().unwrap(),
        corpus().to_str().unwrap(),
        "--format",
        "tsv",
        "--topk",
        "3",
        "--heatmap",
        heatmap.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{}", stderr_of(&output));
    let stdout = stdout_of(&output);
    assert!(stdout.contains("sentence line-2: the battery is great"), "{stdout}");
    assert!(stdout.contains("P@1"), "{stdout}");
    assert!(stdout.contains("mAP"), "{stdout}");

    // On the overfit model the top-ranked word is the aspect itself.
    let metrics = stdout.lines().last().unwrap();
    let p_at_1: f64 = metrics
        .split("P@1 ")
        .nth(1)
        .unwrap()
        .split(',')
        .next()
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!(p_at_1 >= 0.9, "{metrics}");

    // Heatmap blocks: a token header per sentence, then one score row per
    // active capsule with exactly one cell per kept token.
    let heatmap_text = std::fs::read_to_string(&heatmap).unwrap();
    let first: Vec<&str> = heatmap_text.lines().next().unwrap().split(',').collect();
    assert_eq!(first[0], "sentence");
    assert_eq!(first[1], "line-2");
    assert_eq!(&first[2..], ["the", "battery", "is", "great"]);
    let second: Vec<&str> = heatmap_text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(second.len(), 2 + 4);
    for cell in &second[2..] {
        cell.parse::<f64>().unwrap();
    }
}

#[test]
fn detect_without_gold_prints_no_metrics() {
    let dir = TempDir::new().unwrap();
    let checkpoint = train_fixture(&dir);
    let plain = dir.path().join("plain.tsv");
    std::fs::write(&plain, "the battery is great\nthe price is awful value\n").unwrap();
    let output = capsar(&[
        "detect",
        checkpoint.to_str().unwrap(),
        plain.to_str().unwrap(),
        "--format",
        "tsv",
    ]);
    assert!(output.status.success(), "{}", stderr_of(&output));
    let stdout = stdout_of(&output);
    assert!(stdout.contains("sentence"), "{stdout}");
    assert!(!stdout.contains("P@1"), "{stdout}");
}

#[test]
fn gradcheck_passes_and_exits_zero() {
    let output = capsar(&["gradcheck"]);
    assert!(output.status.success(), "{}", stderr_of(&output));
    let stdout = stdout_of(&output);
    assert!(stdout.contains("PASSED"), "{stdout}");
    assert!(stdout.contains("embed.table"), "{stdout}");
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let dir = TempDir::new().unwrap();
    let checkpoint = train_fixture(&dir);
    let mut bytes = std::fs::read(&checkpoint).unwrap();
    bytes[0] ^= 0xFF;
    let broken = dir.path().join("broken.cpsr");
    std::fs::write(&broken, bytes).unwrap();
    let output = capsar(&[
        "eval",
        broken.to_str().unwrap(),
        corpus().to_str().unwrap(),
        "--format",
        "tsv",
    ]);
    assert!(!output.status.success());
    assert!(stderr_of(&output).contains("not a checkpoint file"));
}
