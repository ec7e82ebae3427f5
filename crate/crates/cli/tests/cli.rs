use std::path::Path;
use std::process::{Command, Output};

fn tabkit(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tabkit"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn small_fixture(dir: &Path) {
    let o = tabkit(&["gen-fixture", "data", "--tables", "3", "--rows", "80"], dir);
    assert!(o.status.success(), "{}", stderr(&o));
}

const SMALL: &str = r#"
inputs = ["data"]
output_dir = "out"

[analysis]
noise_inputs = ["data/noise"]
sensitivity_columns = 2

[queries]
eval_total = 16
train_total = 64

[train]
epochs = 1
batch_size = 16

[embedder]
feature_dim = 4096
output_dim = 32
"#;

#[test]
fn stage_out_of_order_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    small_fixture(tmp.path());
    std::fs::write(tmp.path().join("run.toml"), SMALL).unwrap();
    let o = tabkit(&["--config", "run.toml", "eval"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("corpus.jsonl"), "{err}");
    assert!(err.contains("ingest"), "{err}");
}

#[test]
fn config_errors_name_their_keys() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(
        tmp.path().join("bad.toml"),
        "[train]\ntemperature = 0.0\nlearnig_rate = 0.1\n[mining]\nh = 0\n",
    )
    .unwrap();
    let o = tabkit(&["--config", "bad.toml", "check-config"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("train.learnig_rate"), "{err}");
}

#[test]
fn invalid_values_are_all_reported() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("bad.toml"), "[train]\ntemperature = 0.0\n[mining]\nh = 0\n").unwrap();
    let o = tabkit(&["--config", "bad.toml", "check-config"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("train.temperature"), "{err}");
    assert!(err.contains("mining.h"), "{err}");
}

#[test]
fn missing_input_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tabkit(&["--input", "nowhere.csv", "ingest"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere.csv"));
}

#[test]
fn check_config_echoes_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tabkit(&["check-config"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("temperature = 0.05"), "{out}");
    assert!(out.contains("seed = 42"), "{out}");
}

#[test]
fn staged_run_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    small_fixture(tmp.path());
    std::fs::write(tmp.path().join("run.toml"), SMALL).unwrap();
    for stage in ["ingest", "build-bench", "mine", "train", "eval", "analyze", "report"] {
        let o = tabkit(&["--config", "run.toml", "--threads", "1", stage], tmp.path());
        assert!(o.status.success(), "{stage}: {}", stderr(&o));
    }
    let runs: Vec<_> = std::fs::read_dir(tmp.path().join("out")).unwrap().collect();
    assert_eq!(runs.len(), 1);
    let dir = runs[0].as_ref().unwrap().path();
    for f in [
        "config.toml",
        "corpus.jsonl",
        "queries.jsonl",
        "qrels.tsv",
        "triplets.jsonl",
        "model.ckpt",
        "model.ckpt.meta.json",
        "embeddings/desk-trained.emb",
        "eval.json",
        "analysis.json",
        "noise.tsv",
        "report.txt",
    ] {
        assert!(dir.join(f).exists(), "{f} missing");
    }
    let report = std::fs::read_to_string(dir.join("report.txt")).unwrap();
    assert!(report.starts_with("| Model"), "{report}");
    assert!(report.contains("desk-trained"));
    let qrels = std::fs::read_to_string(dir.join("qrels.tsv")).unwrap();
    assert!(qrels.starts_with("# tabkit "), "{qrels}");
}

#[test]
fn changed_seed_gets_its_own_directory() {
    let tmp = tempfile::tempdir().unwrap();
    small_fixture(tmp.path());
    std::fs::write(tmp.path().join("run.toml"), SMALL).unwrap();
    for seed in ["1", "2"] {
        let o = tabkit(&["--config", "run.toml", "--seed", seed, "ingest"], tmp.path());
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(std::fs::read_dir(tmp.path().join("out")).unwrap().count(), 2);
}
