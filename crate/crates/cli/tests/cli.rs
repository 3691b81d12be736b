//! End-to-end checks of the installed binary: artifact layout, exit codes,
//! determinism, and flag/config/env precedence.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_memcomputer"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn memcomputer")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_same_bytes(a: &Path, b: &Path) {
    assert_eq!(
        fs::read(a).unwrap(),
        fs::read(b).unwrap(),
        "{} and {} differ",
        a.display(),
        b.display()
    );
}

#[test]
fn gen_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let r = run(&[
            "gen", "--task", "induction16", "--mode", "augmented", "--n", "30", "--n-val", "5",
            "--seed", "7", "--out", out.to_str().unwrap(),
        ]);
        assert!(r.status.success(), "{}", stderr(&r));
    }
    for f in ["train.jsonl", "val.jsonl", "vocab.json"] {
        assert_same_bytes(&a.join(f), &b.join(f));
    }
    assert_eq!(fs::read_to_string(a.join("train.jsonl")).unwrap().lines().count(), 30);
}

#[test]
fn env_seed_wins_over_flags() {
    let dir = tempfile::tempdir().unwrap();
    let enved = dir.path().join("enved");
    let plain = dir.path().join("plain");
    let r = bin()
        .args(["gen", "--n", "20", "--seed", "3", "--out", enved.to_str().unwrap()])
        .env("MEMCOMPUTER_SEED", "9")
        .output()
        .unwrap();
    assert!(r.status.success(), "{}", stderr(&r));
    let r = run(&["gen", "--n", "20", "--seed", "9", "--out", plain.to_str().unwrap()]);
    assert!(r.status.success(), "{}", stderr(&r));
    assert_same_bytes(&enved.join("train.jsonl"), &plain.join("train.jsonl"));

    let other = dir.path().join("other");
    let r = run(&["gen", "--n", "20", "--seed", "3", "--out", other.to_str().unwrap()]);
    assert!(r.status.success());
    assert_ne!(
        fs::read(enved.join("train.jsonl")).unwrap(),
        fs::read(other.join("train.jsonl")).unwrap()
    );
}

#[test]
fn usage_problems_exit_with_one() {
    let r = run(&["train", "--bogus"]);
    assert_eq!(r.status.code(), Some(1));

    let r = run(&["gen"]); // no --out and no config
    assert_eq!(r.status.code(), Some(1));
    assert!(stderr(&r).contains("--out"));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{ "schema_version": 1, "modle": {} }"#).unwrap();
    let r = run(&["gen", "--config", cfg.to_str().unwrap(), "--out", "x"]);
    assert_eq!(r.status.code(), Some(1));
    assert!(stderr(&r).contains("modle"), "{}", stderr(&r));

    let r = run(&["--help"]);
    assert_eq!(r.status.code(), Some(0));
    assert!(stdout(&r).contains("MEMCOMPUTER_SEED"));
}

#[test]
fn gradcheck_exit_codes_track_the_outcome() {
    let r = run(&["gradcheck"]);
    assert_eq!(r.status.code(), Some(0), "{}", stderr(&r));
    assert!(stdout(&r).contains("overall max rel err"));
    assert!(stdout(&r).contains("PASS"));

    let r = run(&["gradcheck", "--tol", "1e-30"]);
    assert_eq!(r.status.code(), Some(3));

    let r = run(&["gradcheck", "--seq-len", "7"]);
    assert_eq!(r.status.code(), Some(1));
}

/// gen -> train -> eval -> inspect, plus a resumed run that must reproduce
/// the uninterrupted metrics byte for byte.
#[test]
fn pipeline_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let r = run(&[
        "gen", "--task", "copy", "--n", "12", "--n-val", "4", "--seed", "5", "--out",
        data.to_str().unwrap(),
    ]);
    assert!(r.status.success(), "{}", stderr(&r));

    let train_flags = |run_dir: &Path, steps: &str| -> Vec<String> {
        [
            "train", "--data", data.to_str().unwrap(), "--run-dir", run_dir.to_str().unwrap(),
            "--arch", "rsdnc", "--hidden", "8", "--locations", "4", "--width", "4", "--heads",
            "1", "--batch-size", "4", "--steps", steps, "--eval-every", "2", "--lr", "1e-3",
            "--seed", "11",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect()
    };

    let full = dir.path().join("full");
    let r = bin().args(train_flags(&full, "4")).output().unwrap();
    assert!(r.status.success(), "{}", stderr(&r));
    assert!(full.join("config.json").is_file());
    assert!(full.join("metrics.csv").is_file());
    assert!(full.join("ckpt-4").join("model.ckpt").is_file());

    // stop at step 2, then resume to 4 in the same run directory
    let resumed = dir.path().join("resumed");
    let r = bin().args(train_flags(&resumed, "2")).output().unwrap();
    assert!(r.status.success(), "{}", stderr(&r));
    let mut again = train_flags(&resumed, "4");
    again.push("--resume".into());
    again.push(resumed.join("ckpt-2").join("model.ckpt").to_str().unwrap().into());
    let r = bin().args(again).output().unwrap();
    assert!(r.status.success(), "{}", stderr(&r));
    assert_same_bytes(&full.join("metrics.csv"), &resumed.join("metrics.csv"));

    let ckpt = full.join("ckpt-4").join("model.ckpt");
    let r = run(&["eval", "--ckpt", ckpt.to_str().unwrap(), "--data", data.to_str().unwrap()]);
    assert!(r.status.success(), "{}", stderr(&r));
    assert!(stdout(&r).contains("wer"), "{}", stdout(&r));

    let r = run(&["inspect", "--ckpt", ckpt.to_str().unwrap(), "--report", "params"]);
    assert!(r.status.success(), "{}", stderr(&r));
    assert!(stdout(&r).contains("parameters:"));

    let r = run(&[
        "inspect", "--ckpt", ckpt.to_str().unwrap(), "--trace", "--data",
        data.join("val.jsonl").to_str().unwrap(), "--sample", "1",
    ]);
    assert!(r.status.success(), "{}", stderr(&r));
    let trace = full.join("traces").join("trace-1.csv");
    assert!(trace.is_file());
    let text = fs::read_to_string(&trace).unwrap();
    assert!(text.starts_with("t,token,free_g_1,"));
    assert!(text.lines().count() > 1);
}
