use std::path::Path;
use std::process::{Command, Output};

use mamr::datagen::format::read_dataset;

fn mamr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mamr")).args(args).env("MAMR_THREADS", "1").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = mamr(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen(dir: &Path, name: &str, antennas: &str, per_class: &str, seed: &str) -> std::path::PathBuf {
    let out = dir.join(name);
    ok(&[
        "gen", "--mods", "bpsk,8fsk,4pam,16qam", "--snr-min", "10", "--snr-max", "10", "--per-class", per_class,
        "--antennas", antennas, "--length", "64", "--seed", seed, "--out", p(&out),
    ]);
    out
}

#[test]
fn usage_errors_exit_with_code_two() {
    assert_eq!(mamr(&["gen", "--antennas", "0", "--out", "/dev/null"]).status.code(), Some(2));
    assert_eq!(mamr(&["complexity", "--method", "nope"]).status.code(), Some(2));
    assert_eq!(mamr(&["bogus"]).status.code(), Some(2));
}

#[test]
fn missing_input_exits_with_code_one() {
    let out = mamr(&["augment", "--in", "/nonexistent/x.bin", "--out", "/tmp/never.bin", "--exchanges", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/x.bin"));
}

#[test]
fn gen_with_zero_per_class_writes_an_empty_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let path = gen(dir.path(), "empty.bin", "2", "0", "1");
    assert_eq!(std::fs::metadata(&path).unwrap().len(), 24);
    assert!(read_dataset(&path).unwrap().is_empty());
}

#[test]
fn augment_multiplies_the_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let src = gen(dir.path(), "src.bin", "4", "25", "2");
    let dst = dir.path().join("aug.bin");
    ok(&["augment", "--in", p(&src), "--out", p(&dst), "--exchanges", "6", "--seed", "3"]);
    assert_eq!(read_dataset(&dst).unwrap().len(), 100 * 7);
    assert!(Path::new(&format!("{}.manifest.json", dst.display())).exists());

    let too_many = mamr(&["augment", "--in", p(&src), "--out", p(&dst), "--exchanges", "7"]);
    assert_eq!(too_many.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&too_many.stderr).contains("max 6"));
}

#[test]
fn dv_on_one_antenna_equals_single() {
    let dir = tempfile::tempdir().unwrap();
    let train = gen(dir.path(), "train.bin", "1", "8", "4");
    let test = gen(dir.path(), "test.bin", "1", "5", "5");
    let model = dir.path().join("model.mnet");
    ok(&[
        "train", "--arch", "cnn-small", "--epochs", "2", "--batch", "8", "--per-antenna", "--data", p(&train),
        "--model-out", p(&model),
    ]);
    assert!(Path::new(&format!("{}.history.csv", model.display())).exists());
    let reports = dir.path().join("reports");
    ok(&["fuse", "--mode", "single,dv,wa", "--model", p(&model), "--data", p(&test), "--report-dir", p(&reports)]);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(reports.join("summary.json")).unwrap()).unwrap();
    let grab = |mode: &str| summary["accuracy"][mode].as_f64().unwrap_or_else(|| panic!("no {mode} in {summary}"));
    assert_eq!(grab("single"), grab("dv"));
    assert_eq!(grab("single"), grab("wa"));
    assert!(reports.join("manifest.json").exists());
}

#[test]
fn complexity_reports_the_voting_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&["complexity", "--antennas", "4", "--feature-size", "512", "--out-dir", p(dir.path())]);
    assert!(stdout.contains("dv"));
    let csv = std::fs::read_to_string(dir.path().join("complexity.csv")).unwrap();
    let flops = |method: &str| -> u64 {
        let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
        let col = header.iter().position(|h| *h == "flops").unwrap();
        let row = csv.lines().find(|l| l.starts_with(method)).unwrap();
        row.split(',').nth(col).unwrap().parse().unwrap()
    };
    assert_eq!(flops("dv"), 4 * flops("single"));
    assert!(dir.path().join("reference_check.txt").exists());
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"mods": "bpsk,qpsk", "snr-min": 0, "snr-max": 0, "per_class": 3, "antennas": 2, "length": 32}"#).unwrap();
    let out = dir.path().join("d.bin");
    ok(&["--config", p(&cfg), "gen", "--per-class", "2", "--out", p(&out)]);
    assert_eq!(read_dataset(&out).unwrap().len(), 4);
}
