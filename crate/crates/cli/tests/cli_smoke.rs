//! End-to-end checks of the `magan` binary: exit codes, config echo, and
//! the files each subcommand leaves behind.

use std::path::Path;
use std::process::{Command, Output};

fn magan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_magan"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_cfg(dir: &Path, body: &str) -> String {
    let path = dir.join("run.cfg");
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "case=1\nbogus_knob=3\n");
    let out = magan(&["gen-truth", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("bogus_knob"));
}

#[test]
fn malformed_override_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "case=1\n");
    let out = magan(&[
        "gen-truth",
        "--config",
        &cfg,
        "--out",
        dir.path().to_str().unwrap(),
        "-s",
        "batch64",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("batch64"));
}

#[test]
fn missing_checkpoint_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "case=1\n");
    let out = magan(&[
        "eval",
        "--config",
        &cfg,
        "--checkpoint",
        dir.path().join("nope.bin").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("missing checkpoint"), "stderr: {}", stderr(&out));
}

#[test]
fn train_before_pretrain_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "case=1\nbatch=4\ntrain_iters=1\n");
    let out =
        magan(&["train", "--config", &cfg, "--out", dir.path().join("out").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "stderr: {}", stderr(&out));
}

#[test]
fn gen_truth_writes_params_and_grid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "case=2\nseed=5\n");
    let out_dir = dir.path().join("truth");
    let out = magan(&[
        "gen-truth",
        "--config",
        &cfg,
        "--out",
        out_dir.to_str().unwrap(),
        "--count",
        "16",
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));

    let csv = std::fs::read_to_string(out_dir.join("truth_params.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 17, "header plus one row per draw");
    assert_eq!(lines[0], "x0,y0,r,n,b");

    let grid = std::fs::read(out_dir.join("truth_grid.pgm")).unwrap();
    assert!(grid.starts_with(b"P5\n"));
}

#[test]
fn effective_config_echo_reflects_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "case=1\nbatch=64\n");
    let out = magan(&[
        "gen-truth",
        "--config",
        &cfg,
        "--out",
        dir.path().join("t").to_str().unwrap(),
        "--count",
        "1",
        "-s",
        "batch=32",
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("# effective configuration"));
    assert!(text.contains("batch=32"), "override wins over the file value");
    assert!(!text.contains("batch=64"));
}

/// A short pretrain run must leave a loadable checkpoint plus metrics, and
/// eval against a config for the other case must refuse it.
#[test]
fn pretrain_then_eval_roundtrip_and_case_guard() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        "case=1\nseed=3\nbatch=4\npretrain_iters=2\nmetrics_every=1\nsnapshot_iters=\nfidelity_samples=8\n",
    );
    let out_dir = dir.path().join("run");
    let out = magan(&["pretrain", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    assert!(out_dir.join("checkpoint.bin").exists());
    let metrics = std::fs::read_to_string(out_dir.join("metrics_pretrain.csv")).unwrap();
    assert!(metrics.starts_with("iteration,stage,"));
    assert_eq!(metrics.lines().count(), 3, "header plus one row per iteration");

    let eval_dir = dir.path().join("eval");
    let ck = out_dir.join("checkpoint.bin");
    let out = magan(&[
        "eval",
        "--config",
        &cfg,
        "--checkpoint",
        ck.to_str().unwrap(),
        "--out",
        eval_dir.to_str().unwrap(),
        "--samples",
        "16",
        "-s",
        "fidelity_samples=8",
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("emulator fidelity"));
    for f in ["best_match.csv", "draws.csv", "truth_grid.pgm", "gen_sim_grid.pgm", "gen_emu_grid.pgm", "emu_pairs_grid.pgm"] {
        assert!(eval_dir.join(f).exists(), "missing {f}");
    }

    let other = write_cfg(&dir.path().join("run"), "case=2\n");
    let out = magan(&[
        "eval",
        "--config",
        &other,
        "--checkpoint",
        ck.to_str().unwrap(),
        "--out",
        eval_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "stderr: {}", stderr(&out));
}

#[test]
fn bench_emits_two_csv_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "case=1\nbatch=32\n");
    let csv_path = dir.path().join("bench.csv");
    let out = magan(&[
        "bench",
        "--config",
        &cfg,
        "--sim-count",
        "64",
        "--emu-count",
        "64",
        "--reps",
        "2",
        "--target-us",
        "50",
        "--out",
        csv_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("source,"));
    assert!(lines[1].starts_with("simulator_"));
    assert!(lines[2].starts_with("emulator_"));
    // The source labels stay comma-free so every row parses to the same
    // column count as the header.
    for line in &lines {
        assert_eq!(line.split(',').count(), lines[0].split(',').count());
    }
    assert!(stdout(&out).contains("multiplier"));
}
