use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn singlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_singlab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn run(cmd: &str, config: &Path, out: &Path) -> Output {
    singlab(&[
        cmd,
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ])
}

/// Rows of a CSV as floats, header dropped; empty cells become NaN.
fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines
        .map(|l| {
            l.split(',')
                .map(|c| c.parse().unwrap_or(f64::NAN))
                .collect()
        })
        .collect();
    (header, rows)
}

const CLOSED_FORM: &str = r#"{
  "problem": {
    "lower": [-1.0], "upper": [1.0], "cells": [256],
    "datum": { "kind": "constant", "value": 1.0 },
    "support": "strictly-positive", "gamma": 3.0
  }
}"#;

#[test]
fn solve_reproduces_the_quarter_power_solution() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", CLOSED_FORM);
    let out = tmp.path().join("out");
    let o = run("solve", &cfg, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_csv(&out.join("solution.csv"));
    assert!(header[0].starts_with("t "));
    assert!(header[1].starts_with("u "));
    let mut worst = 0.0_f64;
    for r in &rows {
        let t: f64 = r[0];
        if t.abs() <= 0.9 {
            // u^4 = 1 - t^2 solves -u'' = u^{-3} with u(+-1) = 0.
            worst = worst.max((r[1] - (1.0 - t * t).sqrt()).abs());
        }
        assert!((r[2] - r[1].powi(4) / 4.0).abs() <= 1e-12 * (1.0 + r[2]));
    }
    assert!(worst <= 1e-4, "max error {worst}");
    assert!(out.join("summary.json").exists());
    assert!(out.join("profile.svg").exists());
}

#[test]
fn solve_honours_the_exponent_override() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", CLOSED_FORM);
    let out = tmp.path().join("out");
    let o = singlab(&[
        "solve",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--n",
        "1",
    ]);
    assert!(o.status.success());
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["n"], 1.0);
}

#[test]
fn invalid_configs_exit_with_code_two_and_write_nothing() {
    let tmp = TempDir::new().unwrap();
    let bad = [
        CLOSED_FORM.replace("\"value\": 1.0", "\"value\": -1.0"),
        CLOSED_FORM.replace("\"cells\": [256]", "\"cells\": [0]"),
        CLOSED_FORM.replace("\"gamma\": 3.0", "\"gamma\": 3.0, \"exponent\": 2"),
        CLOSED_FORM.replace("\"lower\": [-1.0]", "\"lower\": [1.0]"),
        "{ not json".to_string(),
    ];
    for (k, body) in bad.iter().enumerate() {
        let cfg = write_config(tmp.path(), &format!("bad{k}.json"), body);
        let out = tmp.path().join(format!("out{k}"));
        for cmd in ["solve", "sweep", "oned"] {
            let o = run(cmd, &cfg, &out);
            assert_eq!(o.status.code(), Some(2), "config {k}, {cmd}");
            assert!(!out.exists(), "config {k}, {cmd} created output");
        }
    }
    let o = singlab(&["solve", "--config", "/nonexistent.json", "--out", "/tmp/x"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn compact_support_commands_reject_a_positive_datum() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", CLOSED_FORM);
    let out = tmp.path().join("out");
    assert_eq!(run("limit-check", &cfg, &out).status.code(), Some(2));
    assert_eq!(run("conjecture", &cfg, &out).status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn zero_datum_gives_zero_columns() {
    let tmp = TempDir::new().unwrap();
    let body = CLOSED_FORM.replace("\"value\": 1.0", "\"value\": 0.0");
    let cfg = write_config(tmp.path(), "z.json", &body);
    let out = tmp.path().join("out");
    assert!(run("solve", &cfg, &out).status.success());
    let (_, rows) = read_csv(&out.join("solution.csv"));
    assert_eq!(rows.len(), 257);
    assert!(rows.iter().all(|r| r[1] == 0.0 && r[2] == 0.0));
}

#[test]
fn oned_recovers_the_cubic_case() {
    let tmp = TempDir::new().unwrap();
    let body = CLOSED_FORM.replace(
        "\n}",
        ",\n  \"analytic\": { \"n_list\": [3.0, 9.0], \"geometry\": \"compact-support\", \"samples\": 20 }\n}",
    );
    let cfg = write_config(tmp.path(), "a.json", &body);
    let out = tmp.path().join("out");
    let o = run("oned", &cfg, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_csv(&out.join("oned.csv"));
    let col = |name: &str| header.iter().position(|h| h.starts_with(name)).unwrap();
    let cubic = &rows[0];
    assert_eq!(cubic[col("n ")], 3.0);
    assert!((cubic[col("c ")] - 1.0).abs() <= 1e-8);
    assert!((cubic[col("first_zero")] - 2.0_f64.sqrt()).abs() <= 1e-8);
    for r in &rows {
        assert!(r[col("c_lower")] < r[col("c ")] && r[col("c ")] <= r[col("c_upper")]);
    }
    let (_, samples) = read_csv(&out.join("oned_profiles.csv"));
    assert_eq!(samples.len(), 2 * 21);
}

#[test]
fn oned_marks_rows_beyond_the_profile_cap() {
    let tmp = TempDir::new().unwrap();
    let body = CLOSED_FORM.replace(
        "\n}",
        ",\n  \"analytic\": { \"n_list\": [5.0, 1000.0], \"samples\": 10 }\n}",
    );
    let cfg = write_config(tmp.path(), "a.json", &body);
    let out = tmp.path().join("out");
    assert!(run("oned", &cfg, &out).status.success());
    let text = fs::read_to_string(out.join("oned.csv")).unwrap();
    let last = text.lines().last().unwrap();
    assert!(last.contains("capped"), "{last}");
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let body = r#"{
  "problem": {
    "lower": [-2.0], "upper": [2.0], "cells": [128],
    "datum": { "kind": "indicator", "value": 1.0, "lower": [-1.0], "upper": [1.0] },
    "support": "compactly-contained", "gamma": 10.0
  },
  "sweep": { "n_list": [10.0, 40.0], "local_regions": [ { "lower": [-0.9], "upper": [0.9] } ] }
}"#;
    let cfg = write_config(tmp.path(), "s.json", body);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for cmd in ["sweep", "limit-check"] {
        assert!(run(cmd, &cfg, &a.join(cmd)).status.success());
        assert!(run(cmd, &cfg, &b.join(cmd)).status.success());
        for entry in fs::read_dir(a.join(cmd)).unwrap() {
            let name = entry.unwrap().file_name();
            let x = fs::read(a.join(cmd).join(&name)).unwrap();
            let y = fs::read(b.join(cmd).join(&name)).unwrap();
            assert_eq!(x, y, "{cmd}/{name:?} differs");
        }
    }
}

#[test]
fn format_selection_limits_the_artifacts() {
    let tmp = TempDir::new().unwrap();
    let body = CLOSED_FORM.replace("\n}", ",\n  \"output\": { \"formats\": [\"json\"] }\n}");
    let cfg = write_config(tmp.path(), "f.json", &body);
    let out = tmp.path().join("out");
    assert!(run("solve", &cfg, &out).status.success());
    let names: Vec<_> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(names, vec!["summary.json".to_string()]);
}
