//! End-to-end runs of the binary: outputs, overrides and exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn aklab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aklab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

const SMALL: [&str; 10] = [
    "--n-max", "30", "--pilot", "12", "--resolution", "10", "--set", "experiment.burn_in=5", "--kernel", "rbf",
];

fn run_small(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--seed", "3", "--out-dir", dir.to_str().unwrap()];
    args.extend(SMALL);
    args.extend(extra);
    aklab(&args)
}

#[test]
fn run_writes_every_output() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_small(tmp.path(), &["--strategy", "myopic"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["config.toml", "metrics.csv", "samples.csv", "prediction.csv", "uncertainty.csv", "error.csv"] {
        assert!(tmp.path().join(f).is_file(), "missing {f}");
    }
    let metrics = fs::read_to_string(tmp.path().join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("seed,epoch,n_samples,smse,msll,nlpd,rmse,mae\n"));
    assert!(metrics.lines().nth(1).unwrap().starts_with("3,0,12,"));
    let cfg = fs::read_to_string(tmp.path().join("config.toml")).unwrap();
    assert!(cfg.contains("burn_in = 5"));
    assert!(cfg.contains("seed = 3"));
}

#[test]
fn config_file_and_overrides_compose() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("exp.toml");
    fs::write(&cfg, "[kernel]\nname = \"ak\"\nnum_bases = 3\n\n[experiment]\nn_max = 40\n").unwrap();
    let out_dir = tmp.path().join("out");
    let out = aklab(&[
        "run", "--config", cfg.to_str().unwrap(), "--seed", "1", "--out-dir", out_dir.to_str().unwrap(),
        "--pilot", "12", "--resolution", "8", "--hidden", "4", "--set", "experiment.n_max=20",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let written = fs::read_to_string(out_dir.join("config.toml")).unwrap();
    assert!(written.contains("num_bases = 3"));
    assert!(written.contains("hidden = 4"));
    assert!(written.contains("n_max = 20"));
}

#[test]
fn same_seed_same_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(code(&run_small(a.path(), &[])), 0);
    assert_eq!(code(&run_small(b.path(), &[])), 0);
    for f in ["metrics.csv", "samples.csv", "prediction.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().to_str().unwrap();
    let cases: [&[&str]; 5] = [
        &["run", "--seed", "0", "--out-dir", dir, "--kernel", "matern"],
        &["run", "--seed", "0", "--out-dir", dir, "--set", "kernel.nope=1"],
        &["run", "--seed", "0", "--out-dir", dir, "--n-max", "5"],
        &["run", "--seed", "0", "--out-dir", dir, "--variant", "half"],
        &["run", "--seed", "0", "--out-dir", dir, "--config", "/nonexistent/exp.toml"],
    ];
    for args in cases {
        let out = aklab(args);
        assert_eq!(code(&out), 2, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn seed_and_out_dir_are_required() {
    assert_eq!(code(&aklab(&["run", "--out-dir", "/tmp/x"])), 2);
    assert_eq!(code(&aklab(&["bench", "--seed", "1"])), 2);
}

#[test]
fn flat_terrain_is_a_numerical_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let grid = tmp.path().join("flat.txt");
    let mut text = String::from("3 3 0 10 0 10\n");
    for _ in 0..3 {
        text.push_str("5 5 5\n");
    }
    fs::write(&grid, text).unwrap();
    let out_dir = tmp.path().join("out");
    let mut args = vec![
        "run", "--seed", "0", "--out-dir", out_dir.to_str().unwrap(), "--env-file", grid.to_str().unwrap(),
    ];
    args.extend(SMALL);
    let out = aklab(&args);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn summarize_reads_run_output() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&run_small(tmp.path(), &[])), 0);
    let metrics = tmp.path().join("metrics.csv");
    let out_dir = tmp.path().join("sum");
    let out = aklab(&[
        "summarize", metrics.to_str().unwrap(), "--out-dir", out_dir.to_str().unwrap(), "--label", "rbf",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert!(text.lines().nth(1).unwrap().starts_with("rbf,1,"));

    let bad = tmp.path().join("bad.csv");
    fs::write(&bad, "seed,epoch,smse\n0,0,1.0\n").unwrap();
    let out = aklab(&["summarize", bad.to_str().unwrap(), "--out-dir", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_samples"));
}
