//! End-to-end tests of the `pushasep` binary: output correctness,
//! bit-exact reproducibility, config-file precedence, and exit codes.

use std::process::Command;

use pushasep_core::stats::{skellam_pmf, skellam_sf};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pushasep"))
}

fn run_ok(args: &[&str]) -> String {
    let out = bin().args(args).output().expect("spawn");
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Parse the CSV body (skipping the `#` header block) into rows.
fn csv_rows(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<String> = lines
        .next()
        .expect("header row")
        .split(',')
        .map(|s| s.to_string())
        .collect();
    let rows = lines
        .map(|l| l.split(',').map(|s| s.to_string()).collect())
        .collect();
    (header, rows)
}

fn header_value(text: &str, key: &str) -> Option<String> {
    let prefix = format!("# {key} = ");
    text.lines()
        .find(|l| l.starts_with(&prefix))
        .map(|l| l[prefix.len()..].to_string())
}

#[test]
fn green_single_particle_matches_skellam() {
    let (r, l, t) = (1.0, 0.5, 1.0);
    let text = run_ok(&[
        "green", "--n", "1", "--r", "1", "--l", "0.5", "--t", "1", "--window", "8",
    ]);
    let (header, rows) = csv_rows(&text);
    assert_eq!(header, vec!["x1", "probability"]);
    assert!(!rows.is_empty());
    for row in rows {
        let x: i64 = row[0].parse().unwrap();
        let p: f64 = row[1].parse().unwrap();
        let want = skellam_pmf(x - (-1), r * t, l * t);
        assert!((p - want).abs() < 1e-10, "x={x}: {p} vs {want}");
    }
}

#[test]
fn output_is_bit_exact_across_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let p1 = dir.path().join("a.csv");
    let p2 = dir.path().join("b.csv");
    for p in [&p1, &p2] {
        let out = bin()
            .args([
                "simulate",
                "--initial",
                "step:2",
                "--t-max",
                "0.8",
                "--replicas",
                "500",
                "--seed",
                "42",
                "--path",
                "1:0.8",
                "--thresholds",
                "-1",
                "--out",
                p.to_str().unwrap(),
            ])
            .output()
            .unwrap();
        assert!(out.status.success());
    }
    let a = std::fs::read(&p1).unwrap();
    let b = std::fs::read(&p2).unwrap();
    assert_eq!(a, b, "same config must reproduce the file bit-exactly");
}

#[test]
fn fredholm_single_particle_tail() {
    let text = run_ok(&[
        "fredholm",
        "--path",
        "1:1.0",
        "--thresholds",
        "-1",
        "--r",
        "1",
        "--l",
        "1",
    ]);
    let p: f64 = header_value(&text, "probability").unwrap().parse().unwrap();
    let want = skellam_sf(0, 1.0, 1.0);
    assert!((p - want).abs() < 1e-7, "{p} vs {want}");
    // the trace lists the window doubling history
    let (header, rows) = csv_rows(&text);
    assert_eq!(header, vec!["window", "determinant"]);
    assert!(!rows.is_empty());
}

#[test]
fn fredholm_continuum_smoke() {
    let text = run_ok(&[
        "fredholm",
        "--process",
        "airy2",
        "--times",
        "0.0",
        "--thresholds",
        "0.0",
        "--order",
        "30",
    ]);
    let p: f64 = header_value(&text, "probability").unwrap().parse().unwrap();
    assert!(p > 0.9 && p < 1.0, "P(A2(0) <= 0) = {p}");
}

#[test]
fn simulate_exclusion_clean_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let events = dir.path().join("events.jsonl");
    let text = run_ok(&[
        "simulate",
        "--initial",
        "step:4",
        "--t-max",
        "2.0",
        "--replicas",
        "10",
        "--export-events",
        events.to_str().unwrap(),
    ]);
    let (_, rows) = csv_rows(&text);
    let viol = rows
        .iter()
        .find(|r| r[0] == "exclusion_violations")
        .unwrap();
    assert_eq!(viol[1], "0");
    // JSON-lines export: every line parses; times carry 12 significant digits
    let log = std::fs::read_to_string(&events).unwrap();
    assert!(!log.is_empty());
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let t = v["time"].as_str().unwrap();
        assert!(t.contains('e') && t.len() >= 13, "time format: {t}");
        assert!(v["particle"].as_u64().unwrap() >= 1);
        assert!(v["direction"] == "left" || v["direction"] == "right");
    }
}

#[test]
fn limit_reports_fixed_time_specialization() {
    let text = run_ok(&["limit", "--germ", "fixed-time:0.3", "--r", "4", "--l", "1"]);
    let (_, rows) = csv_rows(&text);
    let sv: f64 = rows
        .iter()
        .find(|r| r[0] == "flat_s_v")
        .unwrap()[1]
        .parse()
        .unwrap();
    assert!((sv - 12.0f64.powf(1.0 / 3.0)).abs() < 1e-12);
    let sh: f64 = rows
        .iter()
        .find(|r| r[0] == "flat_s_h")
        .unwrap()[1]
        .parse()
        .unwrap();
    assert!((sh - 12.0f64.powf(2.0 / 3.0) / 2.0).abs() < 1e-12);
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    std::fs::write(&cfg, "n = 1\nr = 1.0\nl = 0.25\nt = 1.0\nwindow = 6\n").unwrap();
    // config value used
    let text = run_ok(&["green", "--config", cfg.to_str().unwrap()]);
    assert_eq!(header_value(&text, "l").unwrap(), "2.5000000000000000e-1");
    // flag overrides config
    let text = run_ok(&["green", "--config", cfg.to_str().unwrap(), "--l", "0.75"]);
    assert_eq!(header_value(&text, "l").unwrap(), "7.5000000000000000e-1");
}

#[test]
fn json_format_parses() {
    let text = run_ok(&["limit", "--germ", "tagged:0.5", "--format", "json"]);
    let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(doc["command"], "limit");
    assert!(doc["rows"].as_array().unwrap().len() >= 5);
}

#[test]
fn kernel_indicator_zero_rows() {
    // p1 == p2: no indicator contribution; reversing the pair must give
    // the bare main term. Sanity: values finite and the grid is complete.
    let text = run_ok(&[
        "kernel", "--variant", "step", "--n1", "2", "--t1", "1.0", "--n2", "2", "--t2", "1.0",
        "--x1-min", "-3", "--x1-max", "-1", "--x2-min", "-3", "--x2-max", "-1",
    ]);
    let (_, rows) = csv_rows(&text);
    assert_eq!(rows.len(), 9);
    for row in rows {
        let v: f64 = row[2].parse().unwrap();
        assert!(v.is_finite());
    }
}

#[test]
fn validation_errors_exit_2() {
    let out = bin()
        .args(["green", "--r", "-1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin()
        .args(["fredholm", "--path", "3:1.0,1:2.0", "--thresholds", "0,0"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    // clap usage errors share the validation exit code
    let out = bin().args(["green", "--bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numerical_errors_exit_3() {
    // a strongly drifting particle escapes every oracle window the
    // command is willing to try: numerical failure, exit 3
    let out = bin()
        .args([
            "green", "--n", "1", "--r", "8", "--l", "0", "--t", "70", "--oracle", "--window",
            "8", "--min-prob", "1e-3",
        ])
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(3),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}
