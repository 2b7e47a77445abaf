use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cliffordm"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn cliffordm")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = cli(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

const TINY: &[&str] = &[
    "--set", "input_size=32",
    "--set", "dim=8",
    "--set", "num_self_blocks=1",
    "--set", "epochs=2",
    "--set", "batch_size=4",
    "--set", "accum_steps=1",
    "--set", "warmup_epochs=1",
];

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["profile", "--set", "depth=4"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("depth"));

    std::fs::write(dir.path().join("bad.conf"), "dim = 32\nlearning_rate = 0.1\n").unwrap();
    let out = cli(&["profile", "--config", "bad.conf"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
}

#[test]
fn invalid_values_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    for bad in ["dim=abc", "batch_size=0", "smoothing=2", "dim"] {
        let out = cli(&["profile", "--set", bad], dir.path());
        assert!(!out.status.success(), "{bad} accepted");
    }
}

#[test]
fn synth_is_deterministic_and_guards_existing_output() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--patients", "12", "--size", "24", "--seed", "3", "--out", "a"], d);
    ok(&["synth", "--patients", "12", "--size", "24", "--seed", "3", "--out", "b"], d);
    assert_eq!(read(d.join("a/manifest.csv")), read(d.join("b/manifest.csv")));
    for entry in std::fs::read_dir(d.join("a/images")).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(read(d.join("a/images").join(&name)), read(d.join("b/images").join(&name)));
    }

    let out = cli(&["synth", "--patients", "12", "--size", "24", "--out", "a"], d);
    assert!(!out.status.success());
    ok(&["synth", "--patients", "5", "--size", "24", "--out", "a", "--force"], d);
    let manifest = String::from_utf8(read(d.join("a/manifest.csv"))).unwrap();
    assert_eq!(manifest.lines().count(), 6);
    // no staging directories are left behind
    let stray: Vec<_> = std::fs::read_dir(d)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().starts_with('.'))
        .collect();
    assert!(stray.is_empty());
}

#[test]
fn split_is_patient_disjoint() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--patients", "60", "--size", "16", "--out", "syn"], d);
    ok(&["split", "--data", "syn", "--seed", "5", "--out", "sp"], d);
    let lines = |f: &str| -> Vec<String> {
        String::from_utf8(read(d.join("sp").join(f))).unwrap().lines().map(String::from).collect()
    };
    let (train, val) = (lines("train.txt"), lines("val.txt"));
    assert_eq!(train.len() + val.len(), 60);
    assert!(train.iter().all(|p| !val.contains(p)));
    assert!(!val.is_empty());
}

#[test]
fn train_then_eval_reproduces_validation_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--patients", "40", "--size", "32", "--seed", "1", "--out", "syn"], d);
    let mut args = vec!["--threads", "1", "train", "--data", "syn", "--out", "run", "--seed", "9"];
    args.extend_from_slice(TINY);
    ok(&args, d);
    for f in ["best.ckpt", "last.ckpt", "history.csv", "header.txt", "val_metrics.json"] {
        assert!(d.join("run").join(f).exists(), "missing {f}");
    }
    let history = String::from_utf8(read(d.join("run/history.csv"))).unwrap();
    assert_eq!(history.lines().count(), 3);

    // the split seed comes from header.txt
    ok(&["eval", "--checkpoint", "run/best.ckpt", "--data", "syn", "--out", "ev"], d);
    let parse = |p: &str| -> serde_json::Value { serde_json::from_slice(&read(d.join(p))).unwrap() };
    let (val, ev) = (parse("run/val_metrics.json"), parse("ev/metrics.json"));
    for key in ["macro_auc", "macro_f1opt", "macro_f1_at_half", "num_samples"] {
        assert_eq!(val[key], ev[key], "{key}");
    }
    let scores = String::from_utf8(read(d.join("ev/scores.csv"))).unwrap();
    assert_eq!(scores.lines().next().unwrap(), "patient_id,eye,N,D,G,C,A,H,M,O");
    assert_eq!(scores.lines().count() as u64 - 1, ev["num_samples"].as_u64().unwrap());

    // the header replays as a config
    let mut again = vec!["--threads", "1", "train", "--data", "syn", "--out", "run2", "--config", "run/header.txt"];
    again.push("--force");
    ok(&again, d);
    assert_eq!(read(d.join("run/history.csv")), read(d.join("run2/history.csv")));
}

#[test]
fn profile_matches_reference_count() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&["profile", "--out", "prof"], dir.path());
    assert!(stdout.contains("851912"));
    let csv = String::from_utf8(read(dir.path().join("prof/profile.csv"))).unwrap();
    assert!(csv.starts_with("component,params,flops"));
    assert!(csv.contains("total,851912,3398398376"));
}
