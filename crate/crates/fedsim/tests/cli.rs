//! End-to-end exercises of the `fedsim` binary: exit codes, the
//! per-stage subcommands, and the manifest interface.

use std::path::Path;
use std::process::{Command, Output};

fn fedsim() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fedsim"))
}

fn mini_config(out_dir: &str) -> String {
    format!(
        "\
[dataset]
source = synthetic
grid = 2 2 2
images_per_domain = 4
height = 4
width = 4
feature_dim = 3
n_classes = 4
class_separation = 1.5
domain_shift = 1
noise_std = 0.3
zeroed_classes_per_town = 1

[split]
partition = country
seen_per_domain = 1

[distribution]
kind = heterogeneous

[federation]
rounds = 2
clients_per_round = 4
local_epochs = 1
local_batch_size = 8
local_lr = 0.05
hidden_dim = 5
bn_momentum = 0.1
silobn = true
optimizer = sgd
server_lr = 1.0
transform = identity

[evaluation]
strategies = standard by_domain
eval_batch_size = 32

[run]
seeds = 0
output_dir = {out_dir}
"
    )
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("exp.cfg");
    std::fs::write(&path, text).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    fedsim().args(args).output().expect("binary spawns")
}

#[test]
fn all_succeeds_and_writes_results() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("results");
    let config = write_config(dir.path(), &mini_config("unused"));
    let output = run(&[
        "all",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{output:?}");
    assert!(out.join("summary.csv").exists());
    assert!(out.join("seed0_lr1/eval.csv").exists());
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.contains("best server_lr"), "{stdout}");
}

#[test]
fn all_honors_seed_override_and_default_out() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("from_config");
    let config = write_config(dir.path(), &mini_config(out_dir.to_str().unwrap()));
    let output = fedsim()
        .args([
            "all",
            "--config",
            config.to_str().unwrap(),
            "--seeds",
            "5,6",
        ])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(output.status.success(), "{output:?}");
    assert!(out_dir.join("seed5_lr1/round_log.csv").exists());
    assert!(out_dir.join("seed6_lr1/round_log.csv").exists());
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    // unknown key
    let bad = mini_config("out").replace("noise_std", "noise_level");
    let config = write_config(dir.path(), &bad);
    let output = run(&["all", "--config", config.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(2), "{output:?}");

    // missing config file
    let missing = dir.path().join("absent.cfg");
    let output = run(&["all", "--config", missing.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(2), "{output:?}");

    // malformed seed override
    let good = write_config(dir.path(), &mini_config("out"));
    let output = run(&["all", "--config", good.to_str().unwrap(), "--seeds", "x"]);
    assert_eq!(output.status.code(), Some(2), "{output:?}");
}

#[test]
fn evaluate_without_training_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &mini_config("unused"));
    let out = dir.path().join("results");
    let output = run(&[
        "evaluate",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(3), "{output:?}");
}

#[test]
fn stage_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &mini_config("unused"));
    let out = dir.path().join("results");
    let out_s = out.to_str().unwrap();
    let cfg_s = config.to_str().unwrap();

    let output = run(&["partition", "--config", cfg_s, "--out", out_s]);
    assert!(output.status.success(), "{output:?}");
    for file in ["partition.tsv", "partition_summary.csv", "skewness.csv"] {
        assert!(out.join(file).exists(), "missing {file}");
    }
    let summary = std::fs::read_to_string(out.join("partition_summary.csv")).unwrap();
    assert!(summary.contains("heterogeneous"), "{summary}");

    let output = run(&["train", "--config", cfg_s, "--out", out_s]);
    assert!(output.status.success(), "{output:?}");
    let cell = out.join("seed0_lr1");
    assert!(cell.join("checkpoint.txt").exists());
    assert!(cell.join("client_stats.tsv").exists());
    assert!(cell.join("round_log.csv").exists());

    let output = run(&["evaluate", "--config", cfg_s, "--out", out_s]);
    assert!(output.status.success(), "{output:?}");
    let eval = std::fs::read_to_string(cell.join("eval.csv")).unwrap();
    assert!(eval.lines().count() >= 3, "{eval}");
    assert!(eval.contains("by_domain"), "{eval}");

    let output = run(&["report", "--config", cfg_s, "--out", out_s]);
    assert!(output.status.success(), "{output:?}");
    assert!(out.join("figure_skewness.csv").exists());
}

#[test]
fn generated_manifest_feeds_a_manifest_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &mini_config("unused"));
    let out = dir.path().join("results");
    let output = run(&[
        "generate",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{output:?}");
    let manifest = out.join("dataset/manifest.tsv");
    assert!(manifest.exists());

    // a config consuming that manifest runs the same pipeline
    let manifest_cfg = mini_config("unused").replace(
        "source = synthetic\ngrid = 2 2 2\nimages_per_domain = 4\nheight = 4\nwidth = 4\nfeature_dim = 3\nn_classes = 4\nclass_separation = 1.5\ndomain_shift = 1\nnoise_std = 0.3\nzeroed_classes_per_town = 1",
        &format!(
            "source = manifest\nmanifest_path = {}\nn_classes = 4",
            manifest.display()
        ),
    );
    let config2 = dir.path().join("manifest_exp.cfg");
    std::fs::write(&config2, manifest_cfg).unwrap();
    let out2 = dir.path().join("results2");
    let output = run(&[
        "all",
        "--config",
        config2.to_str().unwrap(),
        "--out",
        out2.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{output:?}");
    assert!(out2.join("seed0_lr1/eval.csv").exists());
}

#[test]
fn fedsim_threads_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &mini_config("unused"));
    let out = dir.path().join("results");

    let output = fedsim()
        .args([
            "all",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .env("FEDSIM_THREADS", "1")
        .output()
        .unwrap();
    assert!(output.status.success(), "{output:?}");

    let output = fedsim()
        .args(["all", "--config", config.to_str().unwrap()])
        .env("FEDSIM_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2), "{output:?}");
}
