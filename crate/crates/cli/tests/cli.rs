use std::path::Path;
use std::process::{Command, Output};

fn ecw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ecw"))
        .args(args)
        .env("ECW_WORKERS", "1")
        .output()
        .expect("binary runs")
}

fn error_json(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().expect("an error line");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("not JSON ({e}): {line}"))
}

fn tiny_config(dir: &Path, method: &str) -> String {
    let path = dir.join("tiny.cfg");
    std::fs::write(
        &path,
        format!(
            "method = {method}\ntotal_steps = 3000\nseeds = 0,1\nepisode_length = 100\n\
             ppo.horizon = 256\nrnet.budget = 1500\nrnet.validation_fraction = 0.25\n\
             log.trajectories = true\n"
        ),
    )
    .unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn missing_config_is_a_json_io_error() {
    let out = ecw(&["run", "/nonexistent/x.cfg"]);
    assert_eq!(out.status.code(), Some(1));
    let err = error_json(&out);
    assert_eq!(err["error"], "io");
    assert!(err["message"].as_str().unwrap().contains("/nonexistent/x.cfg"));
}

#[test]
fn unknown_key_and_bad_override_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "method = ppo\nppo.learning_rte = 0.1\n").unwrap();
    let out = ecw(&["run", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = error_json(&out);
    assert_eq!(err["error"], "config");
    assert!(err["message"].as_str().unwrap().contains("learning_rte"));

    let good = tiny_config(dir.path(), "ppo");
    let out = ecw(&["run", &good, "--set", "nonsense"]);
    assert_eq!(error_json(&out)["error"], "usage");
}

#[test]
fn usage_errors_exit_with_code_two() {
    let out = ecw(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "usage");
    let out = ecw(&["ablate", "dropout", "x.cfg"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(error_json(&out)["message"].as_str().unwrap().contains("threshold_k"));
}

#[test]
fn run_plot_and_replay_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "ppo_ec");
    let run_dir = dir.path().join("run");
    let out = ecw(&["run", &cfg, "-o", run_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = String::from_utf8_lossy(&out.stdout);
    assert!(summary.starts_with("#schema=ecw-summary/1"), "{summary}");
    for f in [
        "config.cfg",
        "metrics.csv",
        "summary.csv",
        "timing.csv",
        "trajectories.txt",
        "rnet_seed0.ckpt",
        "policy_seed1.ckpt",
    ] {
        assert!(run_dir.join(f).exists(), "missing {f}");
    }

    let metrics = run_dir.join("metrics.csv");
    let svg = dir.path().join("cov.svg");
    let out = ecw(&[
        "plot",
        metrics.to_str().unwrap(),
        "-o",
        svg.to_str().unwrap(),
        "-m",
        "coverage",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(std::fs::read_to_string(&svg).unwrap().contains("ppo_ec"));
    let out = ecw(&["plot", metrics.to_str().unwrap(), "-o", svg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(error_json(&out)["message"].as_str().unwrap().contains("episode_reward"));

    let out = ecw(&["replay", run_dir.join("trajectories.txt").to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(
        text.lines().count() > 4 && text.lines().all(|l| l.ends_with(" ok")),
        "{text}"
    );
}

#[test]
fn malformed_metrics_csv_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "#schema=ecw-metrics/1\nmethod,seed,phaze\n").unwrap();
    let out = ecw(&["plot", bad.to_str().unwrap(), "-o", "x.svg", "-m", "coverage"]);
    assert_eq!(out.status.code(), Some(1));
    let err = error_json(&out);
    assert_eq!(err["error"], "schema");
    assert!(err["message"].as_str().unwrap().contains("phase"));
}
