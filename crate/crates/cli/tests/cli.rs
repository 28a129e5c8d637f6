use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_inferguard")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn validate_prints_the_normalized_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"kind": "attr-attack"}"#);
    let out = run(&["validate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["seed"], 42);
    assert_eq!(v["kind"], "attr-attack");
}

#[test]
fn bad_configs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"kind": "inversion-attack", "defense": {"sigmas": [-1]}}"#);
    let out = run(&["validate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/defense/sigmas/0"));

    let cfg = write(dir.path(), "k.json", r#"{"kind": "bogus"}"#);
    let out = run(&["validate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("inversion-attack"));

    assert_eq!(run(&["validate"]).status.code(), Some(2));
    assert_eq!(run(&["validate", "--config", "/nonexistent/c.json"]).status.code(), Some(2));
}

#[test]
fn attack_verb_must_match_the_config_kind() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"kind": "attr-attack"}"#);
    assert_eq!(run(&["attack-inv", "--config", &cfg]).status.code(), Some(2));
}

#[test]
fn attack_attr_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"kind": "attr-attack", "repetitions": 2, "data": {"n": 200},
            "train": {"epochs": 2}, "defense": {"flip_probabilities": [0, 0.5]}}"#,
    );
    let out_dir = dir.path().join("run");
    let out = run(&["attack-attr", "--config", &cfg, "--out", out_dir.to_str().unwrap(), "--threads", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("target_attr,flip_p,"));
    assert!(stdout.lines().count() >= 3);
    let summary = out_dir.join("attr_summary.csv");
    let before = fs::read(&summary).unwrap();
    fs::remove_file(&summary).unwrap();

    let out = run(&["report", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read(&summary).unwrap(), before);
    assert!(out_dir.join("attr_plot.svg").exists());
}

#[test]
fn train_writes_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"kind": "inversion-attack", "data": {"side": 16, "n_train": 32, "n_query": 16, "n_eval": 4},
            "model": {"hidden_width": 16}, "train": {"epochs": 1, "batch_size": 16}}"#,
    );
    let out = run(&["train", "--config", &cfg, "--out", dir.path().join("t").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("t/victim.nnck").exists());
    assert_eq!(fs::read_to_string(dir.path().join("t/train_log.csv")).unwrap().lines().count(), 2);
}

#[test]
fn report_on_an_empty_directory_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["report", "--out", dir.path().to_str().unwrap()]).status.code(), Some(3));
}
