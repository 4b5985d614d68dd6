use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use reshuffle_core::harness::{build_problem, derive_params, RunConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_reshuffle-opt"))
}

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn zero_trials_is_a_config_error() {
    let cfg = configs().join("mean_quadratic.toml");
    let out = run(&["run", path(&cfg), "--trials", "0"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("trials must be at least 1"));
}

#[test]
fn unknown_flag_prints_usage() {
    let out = run(&["run", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn params_match_the_calculators() {
    let file = configs().join("mean_quadratic.toml");
    let out = run(&["params", path(&file)]);
    assert!(out.status.success());
    let cfg = RunConfig::load(&file).unwrap();
    let problem = build_problem(&cfg).unwrap();
    let expected = serde_json::to_string_pretty(&derive_params(&cfg, problem.as_ref()).unwrap()).unwrap() + "\n";
    assert_eq!(String::from_utf8(out.stdout.clone()).unwrap(), expected);
    let printed: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    for key in ["alpha_complexity", "t_sc", "alpha_sc"] {
        assert!(printed[key].is_number(), "{key}");
    }
    for key in ["beta", "r_p", "r_d", "t_e", "r"] {
        assert!(printed["escape"][key].is_number(), "{key}");
    }
}

#[test]
fn run_output_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("mean_quadratic_rr_sc.toml");
    let outputs: Vec<PathBuf> = ["1", "2"]
        .iter()
        .map(|k| {
            let out_dir = dir.path().join(format!("p{k}"));
            let status = run(&["run", path(&cfg), "--trials", "8", "--parallelism", k, "--out", path(&out_dir)]);
            assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
            out_dir
        })
        .collect();
    let read = |p: &Path| std::fs::read(p).unwrap();
    assert_eq!(read(&outputs[0].join("aggregate.json")), read(&outputs[1].join("aggregate.json")));
    assert_eq!(read(&outputs[0].join("trace.csv")), read(&outputs[1].join("trace.csv")));
    let csv = String::from_utf8(read(&outputs[0].join("trace.csv"))).unwrap();
    assert!(csv.starts_with("trial,epoch,f,grad_norm,g_norm,e_norm,step,mode\n"));

    // The echoed config alone reproduces the aggregate.
    let aggregate: serde_json::Value = serde_json::from_slice(&read(&outputs[0].join("aggregate.json"))).unwrap();
    assert_eq!(aggregate["schema_version"], 1);
    let echo = dir.path().join("echo.json");
    std::fs::write(&echo, aggregate["config"].to_string()).unwrap();
    let again = run(&["run", path(&echo)]);
    assert!(again.status.success());
    assert_eq!(again.stdout, read(&outputs[0].join("aggregate.json")));
}

#[test]
fn escape_demo_check_exit_codes() {
    let ok = run(&["escape-demo", "--trials", "4", "--control-epochs", "100", "--check"]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    let capped = run(&["escape-demo", "--trials", "2", "--epoch-cap", "10", "--check"]);
    assert_eq!(capped.status.code(), Some(2));
}

#[test]
fn compare_rejects_different_problems() {
    let out = run(&[
        "compare",
        path(&configs().join("mean_quadratic.toml")),
        path(&configs().join("logistic_rr_sc.toml")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn verify_concentration_passes_its_check() {
    let out = run(&["verify-concentration", "--draws", "20000", "--certificate-draws", "2000", "--check"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["tails"]["tails"].as_array().unwrap().len(), 20);
}
