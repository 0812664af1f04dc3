use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use concave_clf::cli::{self, config::ExperimentConfig, ANALYZE_HEADER};
use concave_clf::Error;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_concave-clf"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str], out: &Path) -> Output {
    bin().args(args).arg("--out").arg(out).output().expect("binary runs")
}

fn write_config(dir: &Path, json: &str) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, json).unwrap();
    path
}

#[test]
fn shipped_configs_parse() {
    for entry in std::fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
}

#[test]
fn analyze_writes_rates_and_orderings() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["analyze", "--config", configs().join("analyze_integrator.json").to_str().unwrap()], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let csv = std::fs::read_to_string(dir.path().join("rates.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(ANALYZE_HEADER));
    let cap: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(cap[0], "cap");
    let sigma: f64 = cap[4].parse().unwrap();
    assert!((sigma - 1.382934).abs() < 1e-6, "{sigma}");

    let orderings: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("orderings.json")).unwrap()).unwrap();
    assert_eq!(orderings[0]["verdict"]["holds"], true);
}

#[test]
fn tune_accepts_pendulum_target() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["tune", "--config", configs().join("tune_pendulum.json").to_str().unwrap()], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let tuned: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("tuned.json")).unwrap()).unwrap();
    assert!(tuned["rate"].as_f64().unwrap() >= 5.0);
    assert!(dir.path().join("trace.json").exists());
}

#[test]
fn unreachable_target_exits_infeasible_and_keeps_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"windows":{"eps":[1e-3],"c":1.0},
            "tuning":{"sigma":1.0,"sigma_star":1e6,"k_min":0.5,"k_max":2.0,"theta":1.0,"check":"skip"}}"#,
    );
    let out = run(&["tune", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(cli::EXIT_INFEASIBLE as i32));
    assert!(dir.path().join("trace.json").exists());
}

#[test]
fn simulate_writes_per_run_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"plant":{"preset":"integrator","theta":1.0,"x0":3.0},
            "windows":{"xi":[0.5]},
            "sim":{"horizon":1.0},
            "runs":[{"label":"bang bang","controller":{"type":"bang_bang","theta":1.0}},
                    {"label":"soft","controller":{"type":"soft_qp","theta":1.0,"slack_weight":100,
                      "comparison":{"kind":"linear","parameters":{"sigma":1.0}}}}]}"#,
    );
    let out = run(&["simulate", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["trajectory_bang_bang.csv", "metrics_bang_bang.csv", "trajectory_soft.csv", "metrics.csv"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"plant":{"preset":"pendulum"},"unexpected":true}"#);
    let out = run(&["analyze", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(cli::EXIT_CONFIG as i32));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unexpected"));

    let out = run(&["analyze", "--config", "/nonexistent/config.json"], dir.path());
    assert_eq!(out.status.code(), Some(cli::EXIT_CONFIG as i32));

    let cfg = write_config(dir.path(), r#"{"windows":{"eps":[1e-3],"c":1.0},"comparisons":[]}"#);
    let out = run(&["analyze", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(cli::EXIT_CONFIG as i32));

    let out = run(&["reproduce", "integrator", "--tolerance-scale", "0"], dir.path());
    assert_eq!(out.status.code(), Some(cli::EXIT_CONFIG as i32));
}

#[test]
fn duplicate_comparison_ids_rejected() {
    let cfg = ExperimentConfig::from_json(
        r#"{"windows":{"eps":[1e-3],"c":1.0},"comparisons":[
            {"id":"a","comparison":{"kind":"linear","parameters":{"sigma":1}}},
            {"id":"a","comparison":{"kind":"linear","parameters":{"sigma":2}}}]}"#,
    )
    .unwrap();
    assert!(matches!(cfg.resolve_comparisons(1.0), Err(Error::Config(_))));
}

#[test]
fn reproduce_integrator_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["reproduce", "integrator"], dir.path());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}");
    assert!(stdout.contains("PASS") && !stdout.contains("FAIL"));
}

#[test]
fn exit_code_classes() {
    assert_eq!(cli::exit_code(&Error::Infeasible("x".into())), cli::EXIT_INFEASIBLE);
    assert_eq!(cli::exit_code(&Error::InfeasibleNormalization("x".into())), cli::EXIT_INFEASIBLE);
    assert_eq!(cli::exit_code(&Error::Config("x".into())), cli::EXIT_CONFIG);
    assert_eq!(cli::exit_code(&Error::Numerical("x".into())), cli::EXIT_OTHER);
}

#[test]
fn seeded_runs_are_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let out = run(&["--seed", "9", "reproduce", "caps"], d.path());
        assert!(out.status.success() || out.status.code() == Some(cli::EXIT_TOLERANCE as i32));
    }
    let read = |d: &tempfile::TempDir| std::fs::read_to_string(d.path().join("caps.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
}
