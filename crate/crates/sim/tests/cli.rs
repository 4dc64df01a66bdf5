mod common;

use std::process::Command;

use common::{load, scenario_path};

fn skyframe() -> Command {
    Command::new(env!("CARGO_BIN_EXE_skyframe"))
}

#[test]
fn validate_reports_problems_with_exit_status() {
    let ok = skyframe().arg("validate").arg(scenario_path("two_actors.json")).output().unwrap();
    assert!(ok.status.success());
    let dir = tempfile::tempdir().unwrap();
    let mut bad = load("two_actors.json");
    bad.params.d_s = 0.0;
    let path = dir.path().join("bad.json");
    std::fs::write(&path, bad.to_json()).unwrap();
    let out = skyframe().arg("validate").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("d_s"));
    std::fs::write(&path, "{}").unwrap();
    let out = skyframe().arg("validate").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line"));
}

#[test]
fn run_record_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("run.jsonl");
    let metrics = dir.path().join("metrics");
    let out = skyframe()
        .args(["run", "--ticks", "80", "--seed", "4", "--scenario"])
        .arg(scenario_path("moving_obstacle.json"))
        .arg("--record")
        .arg(&trace)
        .arg("--metrics-out")
        .arg(&metrics)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["ticks.csv", "conflicts.csv", "plans.csv", "splines.jsonl"] {
        assert!(metrics.join(f).exists(), "{f}");
    }
    let header: serde_json::Value =
        serde_json::from_str(std::fs::read_to_string(&trace).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(header["seed"], 4);
    let out = skyframe().arg("replay").arg(&trace).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("identical: 80 ticks"));
}
