use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use graphref::cli::RunManifest;
use graphref::training::read_metrics;

fn graphref(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_graphref"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(name);
    let mut args = vec!["gen-data", "--out", p(&out)];
    args.extend_from_slice(extra);
    let o = graphref(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn gen_data_splits_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let flags = ["--p", "3", "--t", "4", "--k", "4", "--episodes", "10000", "--seed", "1"];
    let a = gen(dir.path(), "a.txt", &flags);
    let b = gen(dir.path(), "b.txt", &flags);
    let text = std::fs::read_to_string(&a).unwrap();
    assert!(text.lines().next().unwrap().contains("train=6000 validation=2000 test=2000"));
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    let manifest = RunManifest::load(&dir.path().join("a.txt.manifest.json")).unwrap();
    assert_eq!(manifest.seeds, vec![1]);
    assert!(manifest.dataset_hash.is_some());
}

#[test]
fn infeasible_world_boundary() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "ok.txt", &["--k", "63", "--episodes", "20"]);
    let o = graphref(&["gen-data", "--k", "64", "--episodes", "20", "--out", p(&dir.path().join("no.txt"))]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("infeasible"));
}

#[test]
fn bad_flags_are_configuration_errors() {
    let o = graphref(&["gen-data", "--mode", "sideways", "--out", "x"]);
    assert_eq!(o.status.code(), Some(2));
    let o = graphref(&["train", "--data", "/nonexistent/data.txt"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/data.txt"));
}

#[test]
fn train_then_analyse() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "d.txt", &["--k", "2", "--episodes", "300", "--seed", "4"]);
    let config = dir.path().join("c.toml");
    std::fs::write(&config, "hidden_width = 8\nembedding_width = 8\nepochs = 5\n").unwrap();
    let runs = dir.path().join("runs");
    let train = |seed: &str| {
        let o = graphref(&[
            "train", "--data", p(&data), "--config", p(&config), "--vocab", "6", "--seed", seed, "--epochs", "3",
            "--out-dir", p(&runs),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    };
    train("1");
    train("2");
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(&runs).unwrap().map(|e| e.unwrap().path()).collect();
    dirs.sort();
    assert_eq!(dirs.len(), 2);
    assert!(dirs[0].to_str().unwrap().ends_with("-seed1"));
    let run = &dirs[0];

    let manifest = RunManifest::load(&run.join("manifest.json")).unwrap();
    assert_eq!(manifest.config["epochs"], 3);
    assert_eq!(manifest.config["vocab_size"], 6);
    assert_eq!(manifest.config["hidden_width"], 8);
    let metrics = read_metrics(&run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.iter().filter(|m| m.split == "validation").count(), 3);
    assert_ne!(metrics, read_metrics(&dirs[1].join("metrics.csv")).unwrap());
    let predictions = std::fs::read_to_string(run.join("predictions.csv")).unwrap();
    assert_eq!(predictions.lines().count(), 61);

    let ckpt = run.join("checkpoint.txt");
    let out = dir.path().join("reports");
    for which in ["usage", "robustness", "permutation"] {
        let o = graphref(&["analyze", which, "--ckpt", p(&ckpt), "--data", p(&data), "--out", p(&out)]);
        assert!(o.status.success(), "{which}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let key = run.file_name().unwrap().to_str().unwrap();
    let matrix = std::fs::read_to_string(out.join(format!("robustness-{key}.csv"))).unwrap();
    assert_eq!(matrix.lines().count(), 7);
    assert_eq!(matrix.lines().next().unwrap().split(',').count(), 8);
    let perm: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join(format!("permutation-{key}.json"))).unwrap()).unwrap();
    assert_eq!(perm["agreement_rate"], 1.0);
    assert!(out.join(format!("usage-{key}.csv")).exists());

    let other = gen(dir.path(), "other.txt", &["--p", "2", "--t", "3", "--k", "2", "--episodes", "20"]);
    let o = graphref(&["analyze", "usage", "--ckpt", p(&ckpt), "--data", p(&other), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("incompatible"));
}

#[test]
fn config_contradicting_dataset_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "d.txt", &["--k", "2", "--episodes", "20"]);
    let config = dir.path().join("c.toml");
    std::fs::write(&config, "k = 4\n").unwrap();
    let o = graphref(&["train", "--data", p(&data), "--config", p(&config), "--out-dir", p(&dir.path().join("r"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn tiny_sweep_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = graphref(&[
        "analyze", "sweep", "--grid", "vocab=4,6", "k=2", "--seeds", "2", "--epochs", "1", "--hidden-width", "4",
        "--embedding-width", "4", "--out", p(dir.path()),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("| Vocab Size | 2 distractors |"));
    let sweep = std::fs::read_dir(dir.path()).unwrap().next().unwrap().unwrap().path();
    assert!(sweep.file_name().unwrap().to_str().unwrap().ends_with("-seeds2"));
    let cells = std::fs::read_to_string(sweep.join("cells.csv")).unwrap();
    assert_eq!(cells.lines().count(), 3);
    assert_eq!(std::fs::read_to_string(sweep.join("runs.csv")).unwrap().lines().count(), 5);
}
