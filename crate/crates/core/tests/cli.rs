use std::fs;
use std::path::Path;
use std::process::Command;

use clap::Parser;
use mnist1d::cli::{main_from, resolve, Cli, RunManifest, MANIFEST_NAME, TMP_SUFFIX};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mnist1d"))
}

fn small_gen_config(dir: &Path) -> String {
    let p = dir.join("gen.json");
    fs::write(&p, r#"{"train_count": 60, "test_count": 20}"#).unwrap();
    p.to_string_lossy().into_owned()
}

fn tiny_benchmark_config(dir: &Path) -> String {
    let p = dir.join("bench.json");
    fs::write(
        &p,
        r#"{
            "data": {"train_count": 200, "test_count": 50},
            "models": [{"name": "logistic", "spec": {"kind": "logistic", "input_len": 40, "num_classes": 10}}],
            "train": {"max_steps": 10, "eval_every": 5, "val_count": 50}
        }"#,
    )
    .unwrap();
    p.to_string_lossy().into_owned()
}

fn run(args: &[&str]) -> i32 {
    let mut full = vec!["mnist1d"];
    full.extend_from_slice(args);
    main_from(full)
}

fn no_temp_files(dir: &Path) -> bool {
    fs::read_dir(dir)
        .map(|rd| rd.flatten().all(|e| !e.file_name().to_string_lossy().ends_with(TMP_SUFFIX)))
        .unwrap_or(true)
}

#[test]
fn missing_subcommand_is_a_usage_error() {
    let out = bin().output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = bin().args(["gen", "--frobnicate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn version_lists_formats() {
    let out = bin().arg("--version").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains(env!("CARGO_PKG_VERSION")));
    assert!(text.contains("dataset format 1"));
    assert!(text.contains("mnist1d-checkpoint/1"));
}

#[test]
fn gen_manifest_records_defaults_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let cli = Cli::try_parse_from(["mnist1d", "gen", "--seed", "42", "--out", out.to_str().unwrap()]).unwrap();
    let plan = resolve(&cli).unwrap();
    let expected = mnist1d::datagen::GeneratorConfig {
        seed: 42,
        ..Default::default()
    };
    assert_eq!(plan.manifest.config, serde_json::to_value(&expected).unwrap());
    assert_eq!(plan.manifest.seed, 42);
    assert_eq!(plan.out, out);
}

#[test]
fn flag_seed_beats_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("f.json");
    fs::write(&f, r#"{"seed": 3, "train_count": 10}"#).unwrap();
    let cli = Cli::try_parse_from(["mnist1d", "gen", "--config", f.to_str().unwrap(), "--seed", "7"]).unwrap();
    let m = resolve(&cli).unwrap().manifest;
    assert_eq!(m.seed, 7);
    assert_eq!(m.config["seed"], 7);
    assert_eq!(m.config["train_count"], 10);
    let cli = Cli::try_parse_from(["mnist1d", "gen", "--config", f.to_str().unwrap()]).unwrap();
    assert_eq!(resolve(&cli).unwrap().manifest.seed, 3);
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("bad.json");
    fs::write(&f, r#"{"train_cnt": 10}"#).unwrap();
    let out = dir.path().join("o");
    assert_eq!(run(&["gen", "--config", f.to_str().unwrap(), "--out", out.to_str().unwrap()]), 2);
    assert!(!out.exists() || fs::read_dir(&out).unwrap().next().is_none());
}

#[test]
fn gen_is_byte_identical_and_lists_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_gen_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run(&["gen", "--config", &cfg, "--out", a.to_str().unwrap(), "-q"]), 0);
    assert_eq!(run(&["gen", "--config", &cfg, "--out", b.to_str().unwrap(), "--jobs", "3", "-q"]), 0);
    let m = RunManifest::load(&a.join(MANIFEST_NAME)).unwrap();
    assert_eq!(m.outputs, ["dataset.bin", "train.csv", "test.csv", MANIFEST_NAME]);
    let mut on_disk: Vec<String> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    on_disk.sort();
    let mut listed = m.outputs.clone();
    listed.sort();
    assert_eq!(on_disk, listed, "orphan or missing files");
    for f in ["dataset.bin", "train.csv", "test.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    assert!(m.finished_at.is_some());
}

#[test]
fn manifest_replay_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_benchmark_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run(&["benchmark", "--config", &cfg, "--n-seeds", "1", "--out", a.to_str().unwrap(), "-q"]), 0);
    let manifest = a.join(MANIFEST_NAME);
    assert_eq!(
        run(&["run", "--from-manifest", manifest.to_str().unwrap(), "--out", b.to_str().unwrap(), "-q"]),
        0
    );
    let m = RunManifest::load(&manifest).unwrap();
    for f in m.outputs.iter().filter(|f| *f != MANIFEST_NAME) {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs on replay");
    }
    let table = fs::read_to_string(a.join("table.csv")).unwrap();
    assert!(table.starts_with("model,normal_mean,normal_std,shuffled_mean,shuffled_std\nlogistic,"));
}

#[test]
fn replay_rejects_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join(MANIFEST_NAME);
    fs::write(&m, "{}").unwrap();
    let cli = Cli::try_parse_from(["mnist1d", "run", "--from-manifest", m.to_str().unwrap(), "--seed", "1"]).unwrap();
    let err = resolve(&cli).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("--seed"));
}

#[test]
fn results_do_not_depend_on_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_benchmark_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run(&["benchmark", "--config", &cfg, "--n-seeds", "2", "--jobs", "1", "--out", a.to_str().unwrap(), "-q"]), 0);
    assert_eq!(run(&["benchmark", "--config", &cfg, "--n-seeds", "2", "--jobs", "4", "--out", b.to_str().unwrap(), "-q"]), 0);
    for f in ["result.json", "table.csv", "curves.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn unwritable_output_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let out = blocker.join("sub");
    let cfg = small_gen_config(dir.path());
    assert_eq!(run(&["gen", "--config", &cfg, "--out", out.to_str().unwrap(), "-q"]), 1);
    assert!(no_temp_files(dir.path()));
}

#[test]
fn experiment_errors_exit_one_without_leftovers() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    // zero seeds is rejected by the experiment itself
    assert_eq!(run(&["benchmark", "--n-seeds", "0", "--out", out.to_str().unwrap(), "-q"]), 1);
    assert!(no_temp_files(&out));
    assert!(!out.join(MANIFEST_NAME).exists());
}

#[test]
fn out_defaults_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_gen_config(dir.path());
    let out = dir.path().join("env-out");
    let status = bin()
        .args(["gen", "--config", &cfg, "-q"])
        .env("MNIST1D_OUT", &out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(out.join("dataset.bin").exists());
}
