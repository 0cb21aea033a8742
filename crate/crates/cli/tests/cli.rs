use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pulsestream(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pulsestream")).args(args).arg("--out").arg(out).output().expect("binary runs")
}

#[test]
fn demo1d_writes_its_files() {
    let dir = tempfile::tempdir().unwrap();
    let o = pulsestream(&["demo1d", "--grid-n", "40", "--delta", "0", "--seed", "3"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["config.json", "trials.csv", "aggregates.csv", "truth.csv", "measurement.csv", "estimate.csv", "recovery.json"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let cfg: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("config.json")).unwrap()).unwrap();
    assert_eq!(cfg["N"], 40);
    assert_eq!(cfg["seed"], 3);
}

#[test]
fn sweep_honours_config_file_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"N": 40, "window": [-0.5, 0.5], "spikes": 3, "positivity": [true]}"#).unwrap();
    let out = dir.path().join("run");
    let o = pulsestream(
        &["sweep", "--config", cfg.to_str().unwrap(), "--delta", "0,5", "--r", "1,2", "--trials", "2", "--backend", "splitting"],
        &out,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let trials = fs::read_to_string(out.join("trials.csv")).unwrap();
    assert_eq!(trials.lines().count(), 1 + 2 * 2 * 2);
    assert!(trials.lines().skip(1).all(|l| l.contains(",splitting,")));
}

#[test]
fn bound_and_admissibility_run() {
    let dir = tempfile::tempdir().unwrap();
    let o = pulsestream(&["bound", "--nu", "3", "--r", "1,2"], dir.path());
    assert!(o.status.success());
    let csv = fs::read_to_string(dir.path().join("bound.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 7);
    let o = pulsestream(&["admissibility"], dir.path());
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("admissible"));
}

#[test]
fn invalid_input_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    assert!(!pulsestream(&["demo1d", "--sigma", "-1"], dir.path()).status.success());
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"no_such_key": 1}"#).unwrap();
    assert!(!pulsestream(&["sweep", "--config", bad.to_str().unwrap()], dir.path()).status.success());
    assert!(!pulsestream(&["demo1d", "--backend", "interior"], dir.path()).status.success());
}
