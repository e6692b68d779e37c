use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn gifilter(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gifilter")).args(args).output().unwrap()
}

fn s7() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/s7.json")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn benchmark_twice_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let config = s7();
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out_dir = dir.path().join(run);
        let out = gifilter(&["benchmark", "--config", config.to_str().unwrap(), "--seed", "42", "--out", out_dir.to_str().unwrap()]);
        assert!(out.status.success(), "{}", stderr(&out));
        outputs.push(out_dir);
    }
    for name in ["trajectory.csv", "summary.json", "histogram.csv"] {
        let a = std::fs::read(outputs[0].join(name)).unwrap();
        let b = std::fs::read(outputs[1].join(name)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{name} differs");
    }
    let traj = std::fs::read_to_string(outputs[0].join("trajectory.csv")).unwrap();
    let mut lines = traj.lines();
    assert_eq!(
        lines.next().unwrap(),
        "run,time,truth_0,obs_0,gif_est_0,gif_err,gif_status,ekf_est_0,ekf_err,ekf_status"
    );
    assert_eq!(lines.count(), 10_000);
    let hist = std::fs::read_to_string(outputs[0].join("histogram.csv")).unwrap();
    assert_eq!(hist.lines().next().unwrap(), "bin_left,bin_right,count_gif,count_ekf");
    assert_eq!(hist.lines().count(), 51);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(outputs[0].join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["metadata"]["seed"], 42);
    assert_eq!(summary["filters"].as_array().unwrap().len(), 2);
}

#[test]
fn flags_override_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = gifilter(&[
        "filter",
        "--config",
        s7().to_str().unwrap(),
        "--filters",
        "ekf",
        "--no-collar",
        "--no-quadratic",
        "--substeps",
        "16",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let traj = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert_eq!(traj.lines().next().unwrap(), "run,time,truth_0,obs_0,ekf_est_0,ekf_err,ekf_status");
}

#[test]
fn filter_on_recorded_input_matches_direct_run() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("small.json");
    std::fs::write(
        &config,
        r#"{ "model": { "kind": "cubic1d", "p_crit": 0.1, "alpha": 0.01, "beta": 0.001 },
             "delta": 1.0, "n_obs": 40, "n_substeps": 32, "seed": 8,
             "initial_estimate": { "mu0": [0.3], "sigma0": [[0.01]] } }"#,
    )
    .unwrap();
    let c = config.to_str().unwrap();
    let sim = dir.path().join("sim");
    let direct = dir.path().join("direct");
    let replay = dir.path().join("replay");
    assert!(gifilter(&["simulate", "--config", c, "--out", sim.to_str().unwrap()]).status.success());
    assert!(gifilter(&["filter", "--config", c, "--out", direct.to_str().unwrap()]).status.success());
    let input = sim.join("trajectory.csv");
    let out = gifilter(&["filter", "--config", c, "--input", input.to_str().unwrap(), "--out", replay.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let a = std::fs::read(direct.join("trajectory.csv")).unwrap();
    let b = std::fs::read(replay.join("trajectory.csv")).unwrap();
    assert_eq!(a, b);
    let simulated = std::fs::read_to_string(input).unwrap();
    assert_eq!(simulated.lines().next().unwrap(), "run,time,truth_0,obs_0");
}

#[test]
fn kalman_check_passes() {
    let out = gifilter(&["kalman-check"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["passed"], true);
    assert!(report["max_rel_mean"].as_f64().unwrap() <= 1e-8);
    assert!(report["max_rel_cov"].as_f64().unwrap() <= 1e-8);
}

#[test]
fn failed_check_exits_with_two() {
    let out = gifilter(&["kalman-check", "--steps", "5", "--substeps", "1"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("relative deviation"));
}

#[test]
fn missing_field_exits_with_one_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.json");
    std::fs::write(
        &config,
        r#"{ "model": { "kind": "cubic1d", "p_crit": 0.1, "alpha": 0.01, "beta": 0.001 },
             "delta": 1.0, "initial_estimate": { "mu0": [0.3], "sigma0": [[0.01]] } }"#,
    )
    .unwrap();
    let out = gifilter(&["benchmark", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("n_obs"), "{}", stderr(&out));
}

#[test]
fn usage_errors_exit_with_one() {
    let out = gifilter(&["benchmark", "--config", "x.json", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("Usage"));
    assert_eq!(gifilter(&["teleport"]).status.code(), Some(1));
    assert_eq!(gifilter(&["benchmark", "--config", "/nonexistent/config.json"]).status.code(), Some(1));
    assert_eq!(gifilter(&["--help"]).status.code(), Some(0));
}
