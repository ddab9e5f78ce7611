use std::path::Path;
use std::process::{Command, Output};

fn run(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_narrowfront")).arg("--out").arg(out).args(args).output().unwrap()
}

fn column(csv: &str, name: &str) -> Vec<f64> {
    let mut lines = csv.lines();
    let idx = lines.next().unwrap().split(',').position(|h| h == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().parse().unwrap()).collect()
}

#[test]
fn generated_flat_shape_has_speed_root_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["generate", "--preset", "flat", "--cells", "60"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let shape = dir.path().join("shape.json");
    let o = run(dir.path(), &["speed", "--shape", shape.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("speed.csv")).unwrap();
    assert!((column(&csv, "c_plus")[0] - 2f64.sqrt()).abs() < 1e-8);
    assert!((column(&csv, "c_minus")[0] + 2f64.sqrt()).abs() < 1e-8);
}

#[test]
fn manifest_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        assert!(run(d.path(), &["rate", "--seed", "5", "--cells", "40"]).status.success());
    }
    let read = |d: &tempfile::TempDir, f: &str| std::fs::read_to_string(d.path().join(f)).unwrap();
    assert_eq!(read(&a, "manifest.json"), read(&b, "manifest.json"));
    assert_eq!(read(&a, "rate_plus.csv"), read(&b, "rate_plus.csv"));
    let m: serde_json::Value = serde_json::from_str(&read(&a, "manifest.json")).unwrap();
    assert_eq!(m["seeds"], serde_json::json!([5]));
    assert_eq!(m["command"], "rate");
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"fprime": 2.0, "cells": 30}"#).unwrap();
    let o = run(dir.path(), &["--config", cfg.to_str().unwrap(), "speed", "--preset", "flat", "--fprime", "0.5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    // flat speed is sqrt(2 f')
    let csv = std::fs::read_to_string(dir.path().join("speed.csv")).unwrap();
    assert!((column(&csv, "c_plus")[0] - 1.0).abs() < 1e-8);
    let o = run(dir.path(), &["--config", cfg.to_str().unwrap(), "speed", "--preset", "flat"]);
    assert!(o.status.success());
    let csv = std::fs::read_to_string(dir.path().join("speed.csv")).unwrap();
    assert!((column(&csv, "c_plus")[0] - 2.0).abs() < 1e-8);
}

#[test]
fn print_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["--print-config"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["fprime"], 1.0);
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, &o.stdout).unwrap();
    let again = run(dir.path(), &["--config", cfg.to_str().unwrap(), "--print-config"]);
    assert_eq!(o.stdout, again.stdout);
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["--no-such-flag"]).status.code(), Some(2));
    assert_eq!(run(dir.path(), &[]).status.code(), Some(2));
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"not_a_field": 1}"#).unwrap();
    assert_eq!(run(dir.path(), &["--config", cfg.to_str().unwrap(), "speed"]).status.code(), Some(2));
}

#[test]
fn numerical_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["generate", "--cells", "0"]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{}").unwrap();
    assert_eq!(run(dir.path(), &["speed", "--shape", bad.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn solve_graph_writes_front_trace() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["-q", "solve-graph", "--preset", "flat", "--cells", "30", "--t-end", "12", "--dx", "0.1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stdout.is_empty());
    let csv = std::fs::read_to_string(dir.path().join("front_summary.csv")).unwrap();
    assert!(csv.lines().count() >= 2);
}
