use std::path::Path;
use std::process::{Command, Output};

fn spectool(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spectool")).args(args).current_dir(dir).env_remove("SPECTOOL_SEED").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

const WORKLOAD: &str = r#"{"workload": {
    "agents": 2, "tasks_per_agent": 3,
    "tool_latency": {"mean": 1.0, "stddev": 0.2},
    "spec": {"latency_g": 0.3, "alpha": 0.0, "lambda": 2},
    "main": {"kind": "fixed", "latency": 2.0},
    "overhead_o": 0.05, "seed": 1, "repetitions": 2}}"#;

#[test]
fn model_sweep_example() {
    let d = tempfile::tempdir().unwrap();
    let o = spectool(&["model-sweep", "--alpha", "0:1:0.25", "--g-ratio", "0.25:0.25:1", "--tool-time", "2:2:1", "--G", "2"], d.path());
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    let rows: Vec<&str> = out.lines().skip(1).collect();
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| r.rsplit(',').next().unwrap().parse::<f64>().unwrap() < 2.0));
}

#[test]
fn model_sweep_edge_cases() {
    let d = tempfile::tempdir().unwrap();
    let one = spectool(&["model-sweep", "--alpha", "0", "--g-ratio", "0.5", "--tool-time", "1"], d.path());
    assert_eq!(code(&one), 0);
    assert_eq!(stdout(&one).lines().nth(1).unwrap(), "0,0.5,1,1.000000000");
    let empty = spectool(&["model-sweep", "--alpha", "1:0:0.1", "--g-ratio", "0.5", "--tool-time", "1"], d.path());
    assert_eq!(code(&empty), 2);
    let bad = spectool(&["model-sweep", "--alpha", "0:x:1", "--g-ratio", "0.5", "--tool-time", "1"], d.path());
    assert_eq!(code(&bad), 2);
    assert_eq!(code(&spectool(&["model-sweep", "--bogus"], d.path())), 2);
}

#[test]
fn simulate_writes_mode_groups() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("s.json"), WORKLOAD).unwrap();
    let o = spectool(&["simulate", "--scenario", "s.json", "--mode", "baseline,client_spec"], d.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(d.path().join("results.csv")).unwrap();
    let modes: std::collections::BTreeSet<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(modes.into_iter().collect::<Vec<_>>(), ["baseline", "client_spec"]);
    // alpha = 0 never saves time
    for l in csv.lines().skip(1) {
        let saved: f64 = l.split(',').nth(7).unwrap().parse().unwrap();
        assert!(saved.abs() < 1e-9, "{l}");
    }
}

#[test]
fn simulate_engine_scenario() {
    let d = tempfile::tempdir().unwrap();
    let s = r#"{"engine_scenario": {"o": 0.05, "phi": 0.001, "delta": 0.02, "X1": 1000, "alpha": 1.0,
        "turns": [{"R": 100, "t": 20, "t_o": 200, "T_tool": 1.0}, {"R": 100, "t": 20, "t_o": 200, "T_tool": 1.0}]}}"#;
    std::fs::write(d.path().join("e.json"), s).unwrap();
    let o = spectool(&["simulate", "--scenario", "e.json"], d.path());
    assert_eq!(code(&o), 0);
    let csv = std::fs::read_to_string(d.path().join("engine_totals.csv")).unwrap();
    assert!(csv.contains("tool_cache,1,5.480000000,"), "{csv}");
}

#[test]
fn simulate_usage_errors() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&spectool(&["simulate", "--scenario", "missing.json"], d.path())), 2);
    std::fs::write(d.path().join("bad.json"), r#"{"workload": {"agents": 0}}"#).unwrap();
    assert_eq!(code(&spectool(&["simulate", "--scenario", "bad.json"], d.path())), 2);
    std::fs::write(d.path().join("s.json"), WORKLOAD).unwrap();
    assert_eq!(code(&spectool(&["simulate", "--scenario", "s.json", "--mode", "turbo"], d.path())), 2);
    // engine mode needs per-token timing
    assert_eq!(code(&spectool(&["simulate", "--scenario", "s.json", "--mode", "engine_spec"], d.path())), 2);
}

#[test]
fn seed_env_overrides_config() {
    let d = tempfile::tempdir().unwrap();
    let text = WORKLOAD.replace("\"alpha\": 0.0", "\"alpha\": 0.6");
    std::fs::write(d.path().join("s.json"), text).unwrap();
    let run = |seed: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_spectool"));
        c.args(["compare", "--scenario", "s.json", "--mode", "client_spec"]).current_dir(d.path()).env_remove("SPECTOOL_SEED");
        if let Some(s) = seed {
            c.env("SPECTOOL_SEED", s);
        }
        c.output().unwrap()
    };
    let a = run(None);
    let b = run(Some("1"));
    let c = run(Some("99"));
    assert_eq!(stdout(&a), stdout(&b));
    assert_ne!(stdout(&a), stdout(&c));
    assert_eq!(code(&run(Some("nope"))), 2);
}

#[test]
fn plot_inputs() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("empty.csv"), "").unwrap();
    assert_eq!(code(&spectool(&["plot", "--input", "empty.csv"], d.path())), 2);
    std::fs::write(d.path().join("other.csv"), "a,b\n1,2\n").unwrap();
    assert_eq!(code(&spectool(&["plot", "--input", "other.csv"], d.path())), 2);
    let o = spectool(&["model-sweep", "--alpha", "0:1:0.5", "--g-ratio", "0.2:0.4:0.2", "--tool-time", "1:2:1", "--out", "sweep.csv"], d.path());
    assert_eq!(code(&o), 0);
    let p = spectool(&["plot", "--input", "sweep.csv", "--out-dir", "figs"], d.path());
    assert_eq!(code(&p), 0);
    assert!(d.path().join("figs/speedup_T1.svg").exists());
    assert!(d.path().join("figs/speedup_T2.svg").exists());
}

#[test]
fn serve_bind_failure_is_runtime_error() {
    let d = tempfile::tempdir().unwrap();
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    assert_eq!(code(&spectool(&["serve", "--port", &port], d.path())), 1);
}
