//! Every exit code of the `pconvex` binary, driven through real processes.

use std::path::{Path, PathBuf};
use std::process::Command;

use pconvex::complex::angular_form;
use pconvex::complex::io::write_form;
use pconvex::Complex;
use pconvex_cli::RunConfig;
use serde_json::{json, Value};
use tempfile::TempDir;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn pconvex(args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_pconvex")).args(args).output().unwrap();
    Run {
        code: out.status.code().unwrap(),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

fn write_config(dir: &Path, name: &str, config: &Value) -> PathBuf {
    let path = dir.join(format!("{name}.json"));
    std::fs::write(&path, serde_json::to_string_pretty(config).unwrap()).unwrap();
    path
}

fn run_config(dir: &TempDir, config: &Value, command: &[&str]) -> (Run, PathBuf) {
    let cfg = write_config(dir.path(), "config", config);
    let out = dir.path().join("out");
    let mut args = vec!["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(command);
    (pconvex(&args), out)
}

fn ball() -> Value {
    json!({
        "box": {"lower": [-1.0, -1.0], "upper": [1.0, 1.0]},
        "cells": 12,
        "mask": "1 - abs2",
        "rho": "-log(1 - abs2)",
        "p": 1,
        "estimates": {"trials": 20}
    })
}

fn annulus(rho: &str, p: usize) -> Value {
    json!({
        "box": {"lower": [-1.1, -1.1], "upper": [1.1, 1.1]},
        "cells": 16,
        "mask": "(abs2 - 0.16) * (1 - abs2)",
        "rho": rho,
        "p": p,
        "degree": 1
    })
}

const ANNULUS_BARRIER: &str = "-log(abs2 - 0.16) - log(1 - abs2)";

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn analyze_ball_is_certified() {
    let dir = TempDir::new().unwrap();
    let (r, out) = run_config(&dir, &ball(), &["analyze"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stdout.contains("certified"));
    let report = read_json(&out.join("analyze.json"));
    assert_eq!(report["report"]["certified"], true);
    assert_eq!(report["config_hash"].as_str().unwrap().len(), 16);
    assert!(report["grid_hash"].is_string());
    assert!(report["report"]["l_table"].as_array().unwrap().len() > 1);
}

#[test]
fn reports_are_deterministic() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c", &ball());
    let cfg = cfg.to_str().unwrap();
    let read = |sub: &str, cmd: &str, file: &str| {
        let out = dir.path().join(sub);
        let r = pconvex(&["--config", cfg, "--out", out.to_str().unwrap(), "--seed", "5", "--quiet", cmd]);
        assert_eq!(r.code, 0, "{}", r.stderr);
        assert!(r.stdout.is_empty());
        std::fs::read(out.join(file)).unwrap()
    };
    for (cmd, file) in [("analyze", "analyze.json"), ("check-estimates", "check_estimates.json"), ("verify", "verify.json")] {
        assert_eq!(read("a", cmd, file), read("b", cmd, file), "{cmd}");
    }
}

#[test]
fn seed_flag_changes_estimates() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c", &ball());
    let cfg = cfg.to_str().unwrap();
    let ratios = |seed: &str| {
        let out = dir.path().join(seed);
        let r = pconvex(&["--config", cfg, "--out", out.to_str().unwrap(), "--seed", seed, "check-estimates"]);
        assert_eq!(r.code, 0, "{}", r.stderr);
        let v = read_json(&out.join("check_estimates.json"));
        assert_eq!(v["report"]["basic"]["seed"], seed.parse::<u64>().unwrap());
        v["report"]["basic"]["stats"]["ratios"].clone()
    };
    assert_ne!(ratios("1"), ratios("2"));
}

#[test]
fn annulus_is_not_one_convex() {
    let dir = TempDir::new().unwrap();
    let (r, _) = run_config(&dir, &annulus(ANNULUS_BARRIER, 1), &["analyze"]);
    assert_eq!(r.code, 3);
    assert!(r.stdout.contains("not certified"));
}

#[test]
fn weights_fail_when_l_is_not_positive() {
    let dir = TempDir::new().unwrap();
    let (r, _) = run_config(&dir, &annulus(ANNULUS_BARRIER, 1), &["weights"]);
    assert_eq!(r.code, 3, "{}", r.stderr);
    assert!(r.stderr.contains("not strictly p-convex"));
}

#[test]
fn weights_write_artifacts() {
    let dir = TempDir::new().unwrap();
    let mut cfg = ball();
    cfg["mask"] = json!("0.95 - abs2");
    cfg["rho"] = json!("abs2");
    let (r, out) = run_config(&dir, &cfg, &["weights"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    for f in ["weights.json", "weights_run.json", "phi.csv", "mu.csv", "psi.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn estimate_above_constant_exits_3() {
    let dir = TempDir::new().unwrap();
    let mut cfg = ball();
    cfg["estimates"]["c_basic"] = json!(1e-9);
    let (r, _) = run_config(&dir, &cfg, &["check-estimates"]);
    assert_eq!(r.code, 3, "{}", r.stderr);
    assert!(r.stdout.contains("EXCEEDED"));
}

#[test]
fn config_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let mut cfg = ball();
    cfg["rho"] = json!("-log(1 - abs2");
    let (r, _) = run_config(&dir, &cfg, &["analyze"]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("position"), "{}", r.stderr);

    let mut cfg = ball();
    cfg["unknown"] = json!(1);
    assert_eq!(run_config(&dir, &cfg, &["analyze"]).0.code, 2);

    let mut cfg = ball();
    cfg["p"] = json!(3);
    assert_eq!(run_config(&dir, &cfg, &["analyze"]).0.code, 2);

    assert_eq!(pconvex(&["analyze"]).code, 2);
    assert_eq!(pconvex(&["--config", "/nonexistent/config.json", "analyze"]).code, 2);
    assert_eq!(pconvex(&["--config", "x.json", "frobnicate"]).code, 2);
}

#[test]
fn weight_overflow_exits_4() {
    let dir = TempDir::new().unwrap();
    let mut cfg = ball();
    cfg["mask"] = json!("0.95 - abs2");
    cfg["rho"] = json!("abs2");
    cfg["psi"] = json!("30*abs2");
    let (r, _) = run_config(&dir, &cfg, &["weights"]);
    assert_eq!(r.code, 4, "{}", r.stderr);
}

#[test]
fn betti_and_verify() {
    let dir = TempDir::new().unwrap();
    let (r, out) = run_config(&dir, &annulus(ANNULUS_BARRIER, 2), &["betti"]);
    assert_eq!(r.code, 0);
    let b = read_json(&out.join("betti.json"));
    let bettis: Vec<u64> = b["report"]["degrees"]
        .as_array()
        .unwrap()
        .iter()
        .map(|d| d["betti"].as_u64().unwrap())
        .collect();
    assert_eq!(bettis, vec![1, 1, 0]);

    let (r, out) = run_config(&dir, &annulus(ANNULUS_BARRIER, 2), &["verify"]);
    assert_eq!(r.code, 0, "{}", r.stdout);
    let v = read_json(&out.join("verify.json"));
    assert_eq!(v["report"]["certified_convexity"], true);
    assert_eq!(v["report"]["theorem_consistent"], true);

    let (r, _) = run_config(&dir, &annulus(ANNULUS_BARRIER, 1), &["verify"]);
    assert_eq!(r.code, 0);
    assert!(r.stdout.contains("no vanishing claimed"));
}

#[test]
fn verify_flags_a_non_exhaustion() {
    // |x|² is strictly 1-psh but not an exhaustion of the annulus, so the
    // vanishing hypothesis fails and the check reports the inconsistency
    let dir = TempDir::new().unwrap();
    let (r, out) = run_config(&dir, &annulus("abs2", 1), &["verify"]);
    assert_eq!(r.code, 4, "{}", r.stdout);
    let v = read_json(&out.join("verify.json"));
    assert_eq!(v["report"]["violations"], json!([1]));
}

fn complex_for(config: &Value) -> Complex {
    let cfg: RunConfig = serde_json::from_value(config.clone()).unwrap();
    Complex::new(cfg.grid().unwrap()).unwrap()
}

#[test]
fn solve_exit_codes() {
    let dir = TempDir::new().unwrap();
    let mut cfg = ball();
    cfg["mask"] = json!("0.95 - abs2");
    cfg["rho"] = json!("abs2");
    let c = complex_for(&cfg);
    let forms = dir.path().join("forms");
    let a0 = c.space(0).form_from_fn(|_, x| (2.0 * x[0]).sin() * x[1]);
    write_form(&c.d(&a0).unwrap(), c.space(1), &forms, "exact").unwrap();
    let bad = c.space(1).form_from_fn(|i, x| if i.as_slice() == [0] { x[1] } else { 0.0 });
    write_form(&bad, c.space(1), &forms, "open").unwrap();

    let exact = forms.join("exact.json");
    let (r, out) = run_config(&dir, &cfg, &["solve", "--eta", exact.to_str().unwrap()]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rep = read_json(&out.join("solve.json"));
    assert!(rep["report"]["residual"].as_f64().unwrap() <= 1e-8);
    assert!(out.join("alpha.json").exists() && out.join("alpha_1.csv").exists());

    let open = forms.join("open.json");
    let (r, _) = run_config(&dir, &cfg, &["solve", "--eta", open.to_str().unwrap()]);
    assert_eq!(r.code, 5, "{}", r.stderr);

    // form written for another grid
    let mut other = cfg.clone();
    other["cells"] = json!(10);
    let (r, _) = run_config(&dir, &other, &["solve", "--eta", exact.to_str().unwrap()]);
    assert_eq!(r.code, 2, "{}", r.stderr);

    let ann = annulus("abs2", 1);
    let c = complex_for(&ann);
    write_form(&angular_form(c.space(1)).unwrap(), c.space(1), &forms, "angle").unwrap();
    let angle = forms.join("angle.json");
    let (r, _) = run_config(&dir, &ann, &["solve", "--eta", angle.to_str().unwrap()]);
    assert_eq!(r.code, 6, "{}", r.stderr);
    assert!(r.stderr.contains("cohomology"));
}
