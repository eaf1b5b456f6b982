use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lqc::harness::{self, ExperimentConfig};

fn lqc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lqc"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("spawn lqc")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

const FLL_CONFIG: &str = r#"{"controller": {"kind": "fll"}, "horizon": 200, "seed": 5}"#;

#[test]
fn run_writes_trace_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", FLL_CONFIG);
    let out = dir.path().join("out");
    let o = lqc(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let records = harness::read_trace(&out.join("trace.csv")).unwrap();
    assert_eq!(records.len(), 200);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["controller"], "fll");
    assert_eq!(summary["rounds_completed"], 200);
    assert_eq!(summary["config"]["seed"], 5);
    assert!((summary["regret"].as_f64().unwrap() - records.last().unwrap().cum_regret).abs() == 0.0);
}

#[test]
fn same_seed_gives_identical_trace_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", FLL_CONFIG);
    let read = |name: &str| {
        let out = dir.path().join(name);
        let o = lqc(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "11"]);
        assert!(o.status.success());
        fs::read(out.join("trace.csv")).unwrap()
    };
    let a = read("a");
    assert_eq!(a, read("b"));
    let other = dir.path().join("c");
    assert!(lqc(&["run", "--config", &cfg, "--out", other.to_str().unwrap(), "--seed", "12"]).status.success());
    assert_ne!(a, fs::read(other.join("trace.csv")).unwrap());
}

#[test]
fn library_and_cli_agree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write(dir.path(), "c.json", FLL_CONFIG);
    let out = dir.path().join("out");
    assert!(lqc(&["run", "--config", &cfg_path, "--out", out.to_str().unwrap()]).status.success());
    let trace = harness::run(&ExperimentConfig::from_json(FLL_CONFIG).unwrap()).unwrap();
    assert_eq!(harness::read_trace(&out.join("trace.csv")).unwrap(), trace.records);
}

#[test]
fn replicates_get_their_own_directories() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"controller": {"kind": "ogd"}, "horizon": 30}"#);
    let out = dir.path().join("out");
    let o = lqc(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--replicates", "3"]);
    assert!(o.status.success());
    for i in 0..3 {
        assert!(out.join(format!("replicate-{i:03}")).join("trace.csv").exists());
    }
    let agg: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(agg["replicates"], 3);
    assert_eq!(agg["failed"], 0);
    let seeds: Vec<u64> = agg["summaries"].as_array().unwrap().iter().map(|s| s["seed"].as_u64().unwrap()).collect();
    assert_eq!(seeds.len(), 3);
    assert!(seeds[0] != seeds[1] && seeds[1] != seeds[2]);
}

#[test]
fn oracle_prints_gain_cost_and_binding() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", FLL_CONFIG);
    let o = lqc(&["oracle", "--config", &cfg]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let gain_line = text.lines().find(|l| l.starts_with("gain: ")).unwrap();
    let rows: Vec<Vec<f64>> = serde_json::from_str(&gain_line["gain: ".len()..]).unwrap();
    assert_eq!((rows.len(), rows[0].len()), (2, 3));
    assert!(text.contains("steady_state_cost: "));
    assert!(text.contains("binding: "));
}

#[test]
fn project_reports_a_feasible_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"system": {"kind": "explicit", "a": [[0.5]], "b": [[1.0]], "w": [[1.0]]}, "budget": {"nu": 4.0},
            "controller": {"kind": "ogd"}, "horizon": 10}"#,
    );
    let sigma = write(dir.path(), "s.json", "[[0.0, 0.0], [0.0, 0.0]]");
    let o = lqc(&["project", "--config", &cfg, "--sigma", &sigma]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("feasible: true"));
    let residual: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("equality_residual: "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(residual <= 1e-6);
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.json", r#"{"controller": {"kind": "ogd"}, "horizon": 0}"#);
    let unknown = write(dir.path(), "unknown.json", r#"{"controller": {"kind": "ogd"}, "horizon": 5, "bogus": 1}"#);
    let tight = write(
        dir.path(),
        "tight.json",
        r#"{"system": {"kind": "explicit", "a": [[0.9]], "b": [[1.0]], "w": [[1.0]]}, "budget": {"nu": 1.2},
            "controller": {"kind": "ogd"}, "horizon": 5}"#,
    );
    let out = dir.path().join("out");
    for cfg in [&bad, &unknown, &tight] {
        assert_eq!(lqc(&["run", "--config", cfg, "--out", out.to_str().unwrap()]).status.code(), Some(2), "{cfg}");
    }
    assert_eq!(lqc(&["oracle", "--config", "/nonexistent/c.json"]).status.code(), Some(2));
    let cfg = write(dir.path(), "c.json", FLL_CONFIG);
    let wrong = write(dir.path(), "s.json", "[[1.0]]");
    assert_eq!(lqc(&["project", "--config", &cfg, "--sigma", &wrong]).status.code(), Some(2));
}

#[test]
fn numerical_failures_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    // Far-away input with a tiny iteration cap: the projection cannot finish.
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"system": {"kind": "explicit", "a": [[0.9]], "b": [[1.0]], "w": [[1.0]]}, "budget": {"nu": 1.6},
            "controller": {"kind": "ogd"}, "horizon": 5,
            "sdp": {"equality": 1e-6, "psd": 1e-8, "trace": 1e-8, "projection": 1e-10, "max_iterations": 3}}"#,
    );
    let sigma = write(dir.path(), "s.json", "[[-1000.0, 0.0], [0.0, -1000.0]]");
    let o = lqc(&["project", "--config", &cfg, "--sigma", &sigma]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}
