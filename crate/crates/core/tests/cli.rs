use std::path::Path;
use std::process::{Command, Output};

use dynobj::cli::TRACE_HEADER;
use dynobj::sim::{scenario_1, Scenario};

fn dynobj(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dynobj"))
        .args(args)
        .env_remove("DYNOBJ_SEED")
        .env("RUST_LOG", "off")
        .output()
        .expect("binary runs")
}

fn write_scenario(dir: &Path, name: &str, scenario: &Scenario) -> String {
    let file = dir.join(name);
    std::fs::write(&file, serde_json::to_string_pretty(scenario).unwrap()).unwrap();
    file.to_str().unwrap().to_string()
}

fn modes(trace: &Path) -> Vec<String> {
    let text = std::fs::read_to_string(trace).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "mode").unwrap();
    lines
        .map(|l| l.split(',').nth(col).unwrap().to_string())
        .collect()
}

#[test]
fn scenario_1_unified_stays_in_contouring_mode() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s1");
    let o = dynobj(&["run", "scenario-1", "--out", out.to_str().unwrap()]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let m = modes(&out.join("trace.csv"));
    assert!(m.iter().all(|m| m == "C"));
    for f in ["trace.csv", "metrics.json", "scenario.resolved.json"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["goal_reached"], true);
}

#[test]
fn scenario_2_trace_switches_to_cartesian() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s2");
    let o = dynobj(&["run", "scenario-2", "--out", out.to_str().unwrap()]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let m = modes(&out.join("trace.csv"));
    assert!(m.iter().any(|m| m == "C"));
    assert!(m.iter().any(|m| m == "X"));
}

#[test]
fn unreached_goal_runs_full_duration() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = scenario_1();
    s.sim.duration = 3.0;
    let file = write_scenario(dir.path(), "short.json", &s);
    let out = dir.path().join("short");
    let o = dynobj(&["run", &file, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    let text = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(TRACE_HEADER));
    assert_eq!(lines.count(), 31);
}

#[test]
fn malformed_json_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = serde_json::to_value(scenario_1()).unwrap();
    v["sim"]["durration"] = serde_json::json!(5.0);
    let file = dir.path().join("bad.json");
    std::fs::write(&file, v.to_string()).unwrap();
    let o = dynobj(&[
        "run",
        file.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("durration"));

    std::fs::write(&file, "{ not json").unwrap();
    let o = dynobj(&[
        "run",
        file.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invalid_scenario_values_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = scenario_1();
    s.sim.duration = -1.0;
    s.model.wheelbase = 0.0;
    let file = write_scenario(dir.path(), "invalid.json", &s);
    let o = dynobj(&[
        "run",
        &file,
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_strategy_and_scenario_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = dynobj(&[
        "compare",
        "scenario-1",
        "--strategies",
        "unified,teleport",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = dynobj(&[
        "run",
        "scenario-1",
        "--strategy",
        "teleport",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = dynobj(&["run", "no-such-scenario", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn single_strategy_comparison_has_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = scenario_1();
    s.sim.duration = 2.0;
    let file = write_scenario(dir.path(), "short.json", &s);
    let out = dir.path().join("cmp");
    let o = dynobj(&[
        "compare",
        &file,
        "--strategies",
        "unified",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
    let csv = std::fs::read_to_string(out.join("comparison.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().nth(1).unwrap().starts_with("unified,"));
}

#[test]
fn scenarios_lists_and_emits_builtins() {
    let dir = tempfile::tempdir().unwrap();
    let o = dynobj(&["scenarios", "--emit", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let listing = String::from_utf8_lossy(&o.stdout);
    for name in ["cusp-follow", "scenario-1", "scenario-2"] {
        assert!(listing.contains(name));
        let text = std::fs::read_to_string(dir.path().join(format!("{name}.json"))).unwrap();
        let parsed: Scenario = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed.name, name);
    }
}

#[test]
fn seed_environment_overrides_flag() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = scenario_1();
    s.sim.duration = 1.0;
    let file = write_scenario(dir.path(), "short.json", &s);
    let out = dir.path().join("seeded");
    let o = Command::new(env!("CARGO_BIN_EXE_dynobj"))
        .args(["run", &file, "--seed", "5", "--out", out.to_str().unwrap()])
        .env("DYNOBJ_SEED", "9")
        .env("RUST_LOG", "off")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3));
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["seed"], 9);
}
