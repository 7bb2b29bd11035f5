use std::path::Path;
use std::process::{Command, Output};

use mjctrl::report::AnalysisReport;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mjctrl")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn analyze_phage_table() {
    let o = run(&["analyze", "@phage-lambda"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("status") && out.contains("ok"));
    assert!(out.contains("1.5647078"));
    assert!(out.contains("592.000000"));
    assert!(out.contains("intervention exhaustive") && out.contains("{2}"));
}

#[test]
fn analyze_json_is_deterministic_and_parses() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("report.json");
    let file = file.to_str().unwrap();
    let a = run(&["analyze", "@null-not-approx", "--format", "json", "--json-out", file]);
    assert!(a.status.success(), "{}", stderr(&a));
    let b = run(&["analyze", "@null-not-approx", "--format", "json"]);
    assert_eq!(a.stdout, b.stdout);
    let written = std::fs::read_to_string(file).unwrap();
    assert_eq!(written.trim_end(), stdout(&a).trim_end());
    let report = AnalysisReport::from_json(&written).unwrap();
    assert_eq!(report.model.name, "null-not-approx");
}

#[test]
fn model_file_with_rationals() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(
        dir.path(),
        "scalar.toml",
        "name = \"scalar\"\nhorizon = 2\nb = [[\"1/2\"]]\n[trend]\nmode = \"iid\"\nq = [1]\n[a]\nvalue = [[2]]\n",
    );
    let o = run(&["bsrds", &path]);
    assert!(o.status.success(), "{}", stderr(&o));
    // p_0 = Σ_{n<2} 4^{-(n+1)} / 4 = 1/16 + 1/64 in the limit ε → 0.
    assert!(stdout(&o).contains("0.078125"), "{}", stdout(&o));
}

#[test]
fn non_square_a_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(
        dir.path(),
        "bad.toml",
        "horizon = 1\nb = [[1], [0]]\n[trend]\nmode = \"iid\"\nq = [1]\n[a]\nvalue = [[1, 0, 0], [0, 1, 0]]\n",
    );
    let o = run(&["analyze", &path]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("invalid a (line 6)"), "{err}");
}

#[test]
fn syntax_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "broken.toml", "horizon = 1\nb = [[1]\n");
    let o = run(&["analyze", &path]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn missing_file_names_the_path() {
    let o = run(&["analyze", "/nonexistent/model.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/model.toml"));
}

#[test]
fn capacity_limits_exit_3() {
    let o = run(&["oracle", "@phage-lambda", "--horizon", "6"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("capacity"));
    let o = run(&["analyze", "@phage-lambda", "--horizon", "12"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn gramian_reports_singular_periodic_system() {
    let o = run(&["gramian", "@ncc0-not-necessary", "--horizon", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("singular"));
    assert!(out.contains("rank     2"));
    let o = run(&["gramian", "@ncc0-not-sufficient", "--horizon", "4", "--format", "json"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["rank"], 3);
}

#[test]
fn bsrds_prints_the_eps_trace() {
    let o = run(&["bsrds", "@phage-lambda", "--eps-seq", "1e-2,1e-6,1e-10"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    for eps in ["1e-2", "1e-6", "1e-10"] {
        assert!(out.contains(&format!("eps {eps}")), "{out}");
    }
    assert!(!out.contains("eps 1e-12"));
    let o = run(&["bsrds", "@phage-lambda", "--eps-seq", "1e-6,1e-2"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn intervention_selects_second_scenario() {
    for method in ["greedy", "exhaustive"] {
        let o = run(&["intervene", "@phage-lambda", "--method", method]);
        assert!(o.status.success(), "{}", stderr(&o));
        let out = stdout(&o);
        assert!(out.contains("selected       {2}"), "{method}: {out}");
        assert!(out.contains("k              1"), "{method}: {out}");
    }
}

#[test]
fn subset_replaces_b() {
    let o = run(&["oracle", "@phage-lambda", "--subset", "1", "--format", "json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["null_controllable"], false);
}

#[test]
fn simulate_with_policy_file() {
    let dir = tempfile::tempdir().unwrap();
    let policy = write(dir.path(), "policy.json", r#"{"default": [0], "nodes": {"1": [1]}}"#);
    let o = run(&["simulate", "@phage-lambda", "--x0", "0,0", "--policy-file", &policy]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("E sum |u|^2  1.0000000000"), "{out}");
}

#[test]
fn fixtures_are_listed_and_printed() {
    let o = run(&["fixtures"]);
    let out = stdout(&o);
    for name in mjctrl::fixtures::names() {
        assert!(out.contains(&format!("@{name}")));
    }
    let o = run(&["fixtures", "phage-lambda"]);
    assert_eq!(stdout(&o).trim_end(), mjctrl::fixtures::source("phage-lambda").unwrap().trim_end());
}
