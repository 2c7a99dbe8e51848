use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_speechsem"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

const SMALL: &str = "corpus.n_train=8\ncorpus.n_dev=2\ncorpus.n_test=2\ntrain.stage1_epochs=1\n\
train.stage2_epochs=1\ntrain.joint_epochs=1\ntrain.max_decode_len=4\n";

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&[], dir.path())), 1);
    assert_eq!(code(&run(&["launch"], dir.path())), 1);
    assert_eq!(code(&run(&["eval", "--channel", "fading"], dir.path())), 1);
    assert_eq!(code(&run(&["--help"], dir.path())), 0);
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = run(&["train1", "--out", "o"], dir.path());
    assert_eq!(code(&missing), 2, "{}", String::from_utf8_lossy(&missing.stderr));
    fs::write(dir.path().join("bad.conf"), "train.wobble=3\n").unwrap();
    assert_eq!(code(&run(&["gen", "--config", "bad.conf"], dir.path())), 2);
    fs::write(dir.path().join("junk.ckpt"), "not a checkpoint").unwrap();
    fs::write(dir.path().join("small.conf"), SMALL).unwrap();
    assert_eq!(code(&run(&["gen", "--config", "small.conf", "--out", "o"], dir.path())), 0);
    let o = run(
        &["eval", "--config", "small.conf", "--out", "o", "--checkpoint", "junk.ckpt"],
        dir.path(),
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn numeric_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("hot.conf"), format!("{SMALL}corpus.jitter=1e308\n")).unwrap();
    assert_eq!(code(&run(&["gen", "--config", "hot.conf"], dir.path())), 0);
    let o = run(&["train1", "--config", "hot.conf"], dir.path());
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn full_run_writes_expected_files() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("small.conf"), SMALL).unwrap();
    for args in [
        &["gen", "--config", "small.conf"][..],
        &["train1", "--config", "small.conf"],
        &["train2", "--config", "small.conf", "--channel", "rayleigh"],
        &["eval", "--config", "small.conf", "--snr", "3,9"],
        &["sweep", "--config", "small.conf", "--snr", "0,18"],
        &["stats", "--config", "small.conf"],
        &["params", "--config", "small.conf"],
    ] {
        let o = run(args, p);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let out = p.join("out");
    for f in [
        "corpus.bin",
        "config.txt",
        "stage1.ckpt",
        "stage1_log.csv",
        "stage2.ckpt",
        "stage2_log.csv",
        "eval.csv",
        "summary.csv",
        "prune.csv",
        "prune_steps.csv",
        "awgn/eval.csv",
        "rayleigh/summary.csv",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    let config = fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(config.contains("corpus.n_train=8"));
    let params = run(&["params"], p);
    assert!(String::from_utf8_lossy(&params.stdout).contains("143962"));
}
