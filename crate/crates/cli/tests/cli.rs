use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn cvadvise(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cvadvise")).args(args).output().unwrap()
}

fn short_config(dir: &Path, extra: &str) -> PathBuf {
    let p = dir.join("cfg.toml");
    fs::write(&p, format!("[demand]\ndensity = \"low\"\nseed = 4\n[run]\nduration = \"300 s\"\n{extra}")).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn baseline_run_writes_trajectory_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), "");
    let out = dir.path().join("o");
    let r = cvadvise(&["run", "--config", s(&cfg), "--mode", "baseline", "--out", s(&out)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(out.join("trajectory_baseline.csv").exists());
    assert!(!out.join("latency.csv").exists());
    let manifest = fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("config_hash"));
    assert!(manifest.contains("\"seed\": 4"));
}

#[test]
fn advised_run_writes_latency_and_reruns_from_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), "");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let r = cvadvise(&["run", "--config", s(&cfg), "--mode", "advised", "--seed", "9", "--out", s(&a)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    for f in ["trajectory_advised.csv", "latency.csv", "advisories.csv"] {
        assert!(a.join(f).exists(), "{f}");
    }
    let r = cvadvise(&["run", "--config", s(&a.join("manifest.json")), "--mode", "advised", "--out", s(&b)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    for f in ["trajectory_advised.csv", "latency.csv", "manifest.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn bad_inputs_fail() {
    let dir = tempfile::tempdir().unwrap();
    let r = cvadvise(&["run", "--config", "/no/such/file.toml"]);
    assert!(!r.status.success());
    let cfg = short_config(dir.path(), "");
    assert!(!cvadvise(&["run", "--config", s(&cfg), "--bogus"]).status.success());
    assert!(!cvadvise(&["run", "--config", s(&cfg), "--mode", "sideways"]).status.success());
    let bad = short_config(dir.path(), "dt = -1\n");
    let r = cvadvise(&["validate", "--config", s(&bad)]);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("run.dt"));
}

#[test]
fn validate_applies_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), "");
    let r = cvadvise(&["validate", "--config", s(&cfg), "--capacity", "7", "--latency-profile", "zero"]);
    assert!(r.status.success());
    let text = String::from_utf8_lossy(&r.stdout);
    assert!(text.contains("module_capacity = 7"));
    assert!(text.contains("profile = \"zero\""));
    assert!(text.contains("# sha256 "));
}

#[test]
fn compare_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), "");
    let out = dir.path().join("c");
    let r = cvadvise(&["compare", "--config", s(&cfg), "--out", s(&out)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    for f in ["trajectory_baseline.csv", "trajectory_advised.csv", "moe.csv", "plot_data.csv", "summary.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert!(String::from_utf8_lossy(&r.stdout).contains("stopped delay"));
}

#[test]
fn sweep_runs_every_cell_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), "[sweep]\ndensities = [\"low\", \"medium\", \"high\"]\nseeds = [5]\n");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (out, jobs) in [(&a, "3"), (&b, "1")] {
        let r = cvadvise(&["sweep", "--config", s(&cfg), "--out", s(out), "--jobs", jobs]);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
        assert!(String::from_utf8_lossy(&r.stderr).contains("3 cells, 6 runs"));
    }
    let table = fs::read_to_string(a.join("reductions.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 3);
    assert_eq!(fs::read_to_string(a.join("latency_summary.csv")).unwrap().lines().count(), 1 + 3);
    for d in ["low-5", "medium-5", "high-5"] {
        assert!(a.join(d).join("manifest.json").exists());
    }
    for f in ["moe.csv", "reductions.csv", "latency_summary.csv", "plot_data.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}
