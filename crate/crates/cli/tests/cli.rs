use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rationale"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

const TINY: &str = r#"
[synth]
n_train = 60
n_dev = 20
n_test = 20
n_paragraphs = 6
num_labels = 3
vocab_size = 40
seed = 5

[model]
embed_dim = 8
num_labels = 3
max_paragraphs = 6
max_tokens = 16
context_layers = 1
attention_heads = 2
ffn_dim = 16
projection_dim = 8

[train]
epochs = 2
batch_size = 8
learning_rate = 0.004
seed = 3

[train.loss]
lambda_s = 0.1
"#;

/// Writes the tiny config and a corpus generated from it.
fn tiny_setup() -> (TempDir, PathBuf, PathBuf) {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "tiny.toml", TINY);
    let corpus = dir.path().join("corpus.jsonl");
    let o = run(&["synth", "-c", cfg.to_str().unwrap(), "--out", corpus.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    (dir, cfg, corpus)
}

#[test]
fn help_exits_zero() {
    let o = run(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    for sub in ["synth", "train", "tune", "eval", "gradcheck", "extract-silver", "stats"] {
        assert!(stdout(&o).contains(sub), "missing {sub}");
    }
}

#[test]
fn bad_flags_are_user_errors() {
    assert_eq!(run(&["train", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn synth_is_byte_reproducible_and_counts_records() {
    let (dir, cfg, corpus) = tiny_setup();
    let again = dir.path().join("again.jsonl");
    let o = run(&["synth", "-c", cfg.to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert!(o.status.success());
    let a = fs::read(&corpus).unwrap();
    assert_eq!(a, fs::read(&again).unwrap());
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 100);

    let other = dir.path().join("other.jsonl");
    run(&["synth", "-c", cfg.to_str().unwrap(), "--seed", "6", "--out", other.to_str().unwrap()]);
    assert_ne!(fs::read(&corpus).unwrap(), fs::read(&other).unwrap());
}

#[test]
fn synth_ten_cases() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "s.toml", "[synth]\nn_train = 6\nn_dev = 2\nn_test = 2\n");
    let out = dir.path().join("c.jsonl");
    let o = run(&["synth", "-c", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(out).unwrap().lines().count(), 10);
}

#[test]
fn invalid_sparsity_names_the_field() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "s.toml", "[synth]\nsparsity = 1.5\n");
    let out = dir.path().join("c.jsonl");
    let o = run(&["synth", "-c", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("synth.sparsity"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "s.toml", "[train]\nlerning_rate = 0.1\n");
    let o = run(&["gradcheck", "-c", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("lerning_rate"), "{}", stderr(&o));
}

#[test]
fn gradcheck_passes_and_detects_faults() {
    let o = run(&["gradcheck"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert_eq!(stdout(&o).matches("PASS").count(), 10);

    let o = run(&["gradcheck", "--inject-fault", "selu", "--n-probes", "2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("FAIL"));

    let o = run(&["gradcheck", "--n-probes", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("n_probes"));

    let o = run(&["gradcheck", "--inject-fault", "nonsense"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn gradcheck_machine_format() {
    let o = run(&["gradcheck", "--format", "machine", "--n-probes", "2"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["passed"], true);
    assert_eq!(v["objectives"].as_array().unwrap().len(), 10);
}

#[test]
fn extract_silver_example() {
    let dir = TempDir::new().unwrap();
    let text = write(dir.path(), "d.txt", "See paragraphs 2 and 4.");
    let o = run(&["extract-silver", "--text", text.to_str().unwrap(), "--n-facts", "10"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "{1,3}");
    let o = run(&[
        "extract-silver",
        "--text",
        text.to_str().unwrap(),
        "--n-facts",
        "10",
        "--format",
        "machine",
    ]);
    assert_eq!(stdout(&o).trim(), "[1,3]");
}

#[test]
fn extract_silver_missing_file() {
    let o = run(&["extract-silver", "--text", "/nonexistent/x.txt", "--n-facts", "3"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn stats_reports_splits_and_rejects_empty() {
    let (dir, _cfg, corpus) = tiny_setup();
    let o = run(&["stats", "--corpus", corpus.to_str().unwrap(), "--format", "machine"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["train"]["cases"], 60);
    assert_eq!(v["all"]["cases"], 100);

    let empty = write(dir.path(), "empty.jsonl", "");
    let o = run(&["stats", "--corpus", empty.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("empty"));
}

#[test]
fn bad_corpus_line_is_reported() {
    let dir = TempDir::new().unwrap();
    let c = write(
        dir.path(),
        "c.jsonl",
        "{\"facts\": [\"a\"], \"labels\": [\"2\"]}\n{\"facts\": [\"a\"], \"labels\": [\"nope\"]}\n",
    );
    let o = run(&["stats", "--corpus", c.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn train_then_eval_reproduces_dev_metrics() {
    let (dir, cfg, corpus) = tiny_setup();
    let ck = dir.path().join("model.ckpt");
    let log = dir.path().join("steps.tsv");
    let o = run(&[
        "train",
        "-c",
        cfg.to_str().unwrap(),
        "--corpus",
        corpus.to_str().unwrap(),
        "--checkpoint",
        ck.to_str().unwrap(),
        "--log",
        log.to_str().unwrap(),
        "--format",
        "machine",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let trained: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(ck.exists());
    // header plus ceil(60 / 8) steps per epoch
    assert_eq!(fs::read_to_string(&log).unwrap().lines().count(), 1 + 2 * 8);

    let o = run(&[
        "eval",
        "--checkpoint",
        ck.to_str().unwrap(),
        "--corpus",
        corpus.to_str().unwrap(),
        "--split",
        "dev",
        "--format",
        "machine",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let evald: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    for key in ["micro_f1_masked", "micro_f1_full", "sufficiency", "comprehensiveness", "observed_sparsity"] {
        assert_eq!(trained["dev"][key], evald[key], "{key}");
    }

    let before = fs::read(&ck).unwrap();
    let o = run(&[
        "eval",
        "--checkpoint",
        ck.to_str().unwrap(),
        "--corpus",
        corpus.to_str().unwrap(),
        "--mask",
        "complement",
        "--format",
        "machine",
    ]);
    assert!(o.status.success());
    let comp: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(comp.get("micro_f1_complement").is_some());
    assert!(comp.get("comprehensiveness").is_some());
    assert!(comp.get("micro_f1_masked").is_none());
    assert_eq!(before, fs::read(&ck).unwrap(), "eval must not touch the checkpoint");

    let o = run(&[
        "eval",
        "--checkpoint",
        ck.to_str().unwrap(),
        "--corpus",
        corpus.to_str().unwrap(),
        "--mask",
        "complement",
    ]);
    let table = stdout(&o);
    let line = table.lines().find(|l| l.starts_with("comprehensiveness")).unwrap();
    let shown: f64 = line.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!((shown - comp["comprehensiveness"].as_f64().unwrap()).abs() < 5e-5);
}

#[test]
fn train_is_reproducible_from_config() {
    let (_dir, cfg, corpus) = tiny_setup();
    let args = ["train", "-c", cfg.to_str().unwrap(), "--corpus", corpus.to_str().unwrap(), "--format", "machine"];
    let a = run(&args);
    let b = run(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn eval_missing_checkpoint_is_user_error() {
    let (dir, _cfg, corpus) = tiny_setup();
    let o = run(&[
        "eval",
        "--checkpoint",
        dir.path().join("none.ckpt").to_str().unwrap(),
        "--corpus",
        corpus.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn train_without_model_section_fails() {
    let (dir, _cfg, corpus) = tiny_setup();
    let cfg = write(dir.path(), "nomodel.toml", "[train]\nepochs = 1\n");
    let o = run(&["train", "-c", cfg.to_str().unwrap(), "--corpus", corpus.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("[model]"));
}

#[test]
fn tune_emits_a_row_per_candidate() {
    let (dir, _cfg, corpus) = tiny_setup();
    let body = format!(
        "{TINY}\n[[tune.grid]]\nweight = \"lambda_s\"\nvalues = [0.0, 0.1]\n\n[[tune.grid]]\nweight = \"lambda_c\"\nvalues = [0.0, 0.05, 0.1]\n"
    )
    .replace("epochs = 2", "epochs = 1");
    let cfg = write(dir.path(), "tune.toml", &body);
    let o = run(&["tune", "-c", cfg.to_str().unwrap(), "--corpus", corpus.to_str().unwrap(), "--format", "machine"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 5);
    assert_eq!(v["chosen"].as_array().unwrap().len(), 2);

    let o = run(&["tune", "-c", cfg.to_str().unwrap(), "--corpus", corpus.to_str().unwrap()]);
    let rows = stdout(&o).lines().filter(|l| l.starts_with("lambda_")).count();
    assert_eq!(rows, 5);
}

#[test]
fn experiment_runs_aggregate() {
    let (dir, _cfg, corpus) = tiny_setup();
    let body = format!("{TINY}\n[experiment]\nruns = 2\n").replace("epochs = 2", "epochs = 1");
    let cfg = write(dir.path(), "exp.toml", &body);
    let o = run(&["train", "-c", cfg.to_str().unwrap(), "--corpus", corpus.to_str().unwrap(), "--format", "machine"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["runs"].as_array().unwrap().len(), 2);
}

#[test]
fn out_flag_writes_file() {
    let dir = TempDir::new().unwrap();
    let text = write(dir.path(), "d.txt", "See paragraph 1.");
    let out = dir.path().join("r.txt");
    let o = run(&["extract-silver", "--text", text.to_str().unwrap(), "--n-facts", "3", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).is_empty());
    assert_eq!(fs::read_to_string(out).unwrap().trim(), "{0}");
}
