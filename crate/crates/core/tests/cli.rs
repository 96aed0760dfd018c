use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_interchain")).args(args).env_remove("INTERCHAIN_CONFIG_DIR").output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

#[test]
fn unknown_scenario_exits_2() {
    let out = cli(&["run", "/nonexistent/scenario.toml", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no scenario"));
    assert_eq!(cli(&["matrix", "/nonexistent/scenario.toml"]).status.code(), Some(2));
}

#[test]
fn compile_then_stake() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("option.tdg.json");
    let option = fixtures().join("option");
    let res = cli(&["compile", path(&option.join("option.hsl")), "--ifaces", path(&option), "-o", path(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let golden = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/option.tdg.json")).unwrap();
    assert_eq!(std::fs::read_to_string(&out).unwrap(), golden);

    let stake = |party: &str| {
        let r = cli(&["stake", path(&out), "--party", party]);
        assert!(r.status.success());
        String::from_utf8(r.stdout).unwrap().trim().to_string()
    };
    assert_eq!(stake("ves"), "50");
    assert_eq!(stake("client"), "0");
    assert!(!cli(&["stake", path(&out), "--party", "mallory"]).status.success());
}

#[test]
fn compile_reports_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.hsl");
    std::fs::write(&bad, "import(\"broker.sol\")\nop op1 invocation c9.Nope() using a1\n").unwrap();
    let option = fixtures().join("option");
    let out = dir.path().join("bad.json");
    let res = cli(&["compile", path(&bad), "--ifaces", path(&option), "-o", path(&out)]);
    assert_eq!(res.status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn run_writes_a_passing_report() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    let sc = fixtures().join("scenarios/option_honest.toml");
    let res = cli(&["run", path(&sc), "--seed", "3", "--report", path(&report)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["outcome"], "committed");
    assert_eq!(v["seed"], 3);
    assert_eq!(v["atomicity"]["holds"], true);
    let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
}

#[test]
fn failed_expectation_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let sc = dir.path().join("wrong.toml");
    std::fs::write(&sc, "name = \"wrong\"\napp = \"option\"\n[expect]\noutcome = \"reverted\"\n").unwrap();
    let res =
        Command::new(env!("CARGO_BIN_EXE_interchain")).args(["run", path(&sc)]).env("INTERCHAIN_CONFIG_DIR", fixtures()).output().unwrap();
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("outcome"));
}

#[test]
fn matrix_prints_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("m.json");
    let res = cli(&["matrix", path(&fixtures().join("scenarios/voting_honest.toml")), "--report", path(&report)]);
    assert!(res.status.success());
    let grid = String::from_utf8(res.stdout).unwrap();
    assert!(grid.contains("closed-late") && grid.contains("control (no faults): ok"));
    assert!(!grid.contains("FAIL"));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["cells"].as_array().unwrap().len(), 3 * 6);
}
