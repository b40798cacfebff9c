use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_torus-bridge"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn free_bm_smoke_run() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().to_str().unwrap();
    ok(&[
        "simulate", "--model", "free-bm", "--sigma", "1", "--T", "1", "--steps", "100",
        "--paths", "10", "--seed", "7", "--out", out,
    ]);
    let paths = rows(&dir.path().join("paths.csv"));
    assert_eq!(paths[0], ["path_id", "step", "t", "x1", "x2"]);
    assert_eq!(paths.len(), 1 + 10 * 101);
    assert_eq!(paths[1][2].parse::<f64>().unwrap(), 0.0);
    assert_eq!(paths[101][2].parse::<f64>().unwrap(), 1.0);

    let ends = rows(&dir.path().join("endpoints.csv"));
    assert_eq!(ends.len(), 11);
    assert_eq!(ends[0][0], "path_id");

    let m = manifest(dir.path());
    assert_eq!(m["command"], "simulate");
    assert_eq!(m["config"]["seed"], 7);
    assert_eq!(m["config"]["n_steps"], 100);
    assert_eq!(m["config"]["n_paths"], 10);
    assert_eq!(m["config"]["model"]["sigma"], 1.0);
    assert!(m["version"].is_string());
}

#[test]
fn proposal_run_writes_every_endpoint_and_reruns_identically() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for (dir, workers) in [(&a, "1"), (&b, "3")] {
        ok(&[
            "simulate", "--model", "proposed", "--sigma", "0.8", "--target", "0,0",
            "--steps", "200", "--paths", "2000", "--seed", "11", "--thin", "50",
            "--workers", workers, "--out", dir.path().to_str().unwrap(),
        ]);
    }
    let ends = rows(&a.path().join("endpoints.csv"));
    assert_eq!(ends.len(), 2001);
    for name in ["paths.csv", "endpoints.csv"] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name} differs"
        );
    }
}

#[test]
fn single_pair_rate_is_zero_or_one() {
    let dir = TempDir::new().unwrap();
    ok(&[
        "compare", "--sigma", "0.8", "--steps", "200", "--pairs", "1", "--seed", "3",
        "--out", dir.path().to_str().unwrap(),
    ]);
    let report = rows(&dir.path().join("agreement_report.csv"));
    assert_eq!(report[0], ["n_pairs", "n_agree", "rate", "wilson_low", "wilson_high"]);
    let rate: f64 = report[1][2].parse().unwrap();
    assert!(rate == 0.0 || rate == 1.0);
    let pairs = rows(&dir.path().join("agreement.csv"));
    assert_eq!(pairs[0], ["pair_id", "k1_prop", "k2_prop", "k1_true", "k2_true", "agree"]);
    assert_eq!(pairs.len(), 2);
}

#[test]
fn model_compared_with_itself_always_agrees() {
    let dir = TempDir::new().unwrap();
    ok(&[
        "compare", "--model-a", "proposed", "--model-b", "proposed", "--sigma", "1",
        "--steps", "200", "--pairs", "200", "--out", dir.path().to_str().unwrap(),
    ]);
    let report = rows(&dir.path().join("agreement_report.csv"));
    assert_eq!(report[1][2].parse::<f64>().unwrap(), 1.0);
    assert_eq!(manifest(dir.path())["command"], "compare");
}

fn field(args: &[&str]) -> Vec<[f64; 4]> {
    let dir = TempDir::new().unwrap();
    let mut all = vec!["field"];
    all.extend_from_slice(args);
    all.extend_from_slice(&["--out", dir.path().to_str().unwrap()]);
    ok(&all);
    rows(&dir.path().join("field.csv"))
        .into_iter()
        .skip(1)
        .map(|r| {
            let v: Vec<f64> = r.iter().map(|s| s.parse().unwrap()).collect();
            [v[0], v[1], v[2], v[3]]
        })
        .collect()
}

#[test]
fn field_vanishes_at_target() {
    let f = field(&["--model", "proposed", "--grid", "3", "--time", "0"]);
    assert_eq!(f.len(), 9);
    let center = f[4];
    assert_eq!((center[0], center[1]), (0.0, 0.0));
    assert_eq!((center[2], center[3]), (0.0, 0.0));
    // corner (-1,-1) is a lattice point of the target
    assert_eq!((f[0][2], f[0][3]), (0.0, 0.0));
}

#[test]
fn field_is_zero_on_tie_line() {
    let f = field(&[
        "--model", "proposed", "--grid", "5", "--time", "0.5", "--rect", "-0.5,-0.5,0.5,0.5",
    ]);
    assert_eq!(f.len(), 25);
    let mut on_tie = 0;
    for s in &f {
        if s[0].abs() == 0.5 || s[1].abs() == 0.5 {
            on_tie += 1;
            assert_eq!((s[2], s[3]), (0.0, 0.0), "{s:?}");
        } else {
            // interior points pull towards the origin at rate 1/(T - t) = 2
            assert_eq!((s[2], s[3]), (-2.0 * s[0], -2.0 * s[1]), "{s:?}");
        }
    }
    assert_eq!(on_tie, 16);
}

#[test]
fn negative_coordinates_parse() {
    let dir = TempDir::new().unwrap();
    ok(&[
        "simulate", "--model", "proposed", "--target", "-0.2,0.1", "--start", "-0.3,-0.4",
        "--steps", "10", "--paths", "2", "--out", dir.path().to_str().unwrap(),
    ]);
    let m = manifest(dir.path());
    assert_eq!(m["config"]["start"]["x1"], -0.3);
}

#[test]
fn invalid_flags_fail() {
    for args in [
        vec!["simulate", "--model", "proposed", "--sigma", "-1"],
        vec!["simulate", "--model", "proposed", "--endpoint", "0.1,0.1"],
        vec!["simulate", "--model", "euclid-bridge"],
        vec!["simulate", "--model", "proposed", "--truncation", "3"],
        vec!["simulate", "--model", "nope"],
        vec!["field", "--time", "1.0"],
        vec!["weights", "--run", "/nonexistent/run", "--cutoff", "0.5"],
    ] {
        let dir = TempDir::new().unwrap();
        let mut all = args.clone();
        all.extend_from_slice(&["--out", dir.path().to_str().unwrap()]);
        let out = run(&all);
        assert!(!out.status.success(), "{args:?} should fail");
        assert_ne!(out.status.code(), Some(0));
    }
}

#[test]
fn weights_match_simulate_cutoff_column() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().to_str().unwrap();
    ok(&[
        "simulate", "--model", "proposed", "--sigma", "1", "--steps", "100", "--paths", "50",
        "--seed", "5", "--cutoff", "0.5", "--out", out,
    ]);
    ok(&["weights", "--run", out, "--cutoff", "0.5"]);
    let weights = rows(&dir.path().join("weights.csv"));
    assert_eq!(weights[0], ["path_id", "log_weight"]);
    assert_eq!(weights.len(), 51);
    let ends = rows(&dir.path().join("endpoints.csv"));
    let col = ends[0].iter().position(|c| c == "log_weight").unwrap();
    for (w, e) in weights.iter().skip(1).zip(ends.iter().skip(1)) {
        assert_eq!(w[0], e[0]);
        assert_eq!(w[1], e[col]);
    }
}

#[test]
fn manifest_replays_run() {
    let first = TempDir::new().unwrap();
    let second = TempDir::new().unwrap();
    ok(&[
        "simulate", "--model", "true-bridge", "--truncation", "2", "--sigma", "0.7",
        "--target", "0.2,-0.1", "--steps", "100", "--paths", "20", "--seed", "9",
        "--out", first.path().to_str().unwrap(),
    ]);
    let manifest_path = first.path().join("manifest.json");
    ok(&[
        "simulate", "--config", manifest_path.to_str().unwrap(),
        "--out", second.path().to_str().unwrap(),
    ]);
    assert_eq!(manifest(first.path())["config"], manifest(second.path())["config"]);
    for name in ["paths.csv", "endpoints.csv"] {
        assert_eq!(
            fs::read(first.path().join(name)).unwrap(),
            fs::read(second.path().join(name)).unwrap()
        );
    }
    // inline model flags conflict with a config file
    let out = run(&[
        "simulate", "--config", manifest_path.to_str().unwrap(), "--sigma", "1",
        "--out", second.path().to_str().unwrap(),
    ]);
    assert!(!out.status.success());
}

#[test]
fn check_subset_reports_pass_lines() {
    let out = run(&["check", "--only", "6,7"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines.iter().all(|l| l.starts_with("[PASS] criterion")));
}
