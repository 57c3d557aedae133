use std::path::PathBuf;
use std::process::{Command, Output};

use reconf_harness::{Scenario, ScenarioError};

fn reconf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reconf"))
        .args(args)
        .output()
        .expect("run reconf")
}

fn bundled(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(format!("{name}.toml"))
        .display()
        .to_string()
}

fn temp_scenario(text: &str) -> tempfile::NamedTempFile {
    let f = tempfile::Builder::new().suffix(".toml").tempfile().expect("temp file");
    std::fs::write(f.path(), text).expect("write scenario");
    f
}

const UNDECLARED: &str = r#"name = "bad"
nodes = [1, 2, 3]

[[event]]
step = 10
action = "crash"
nodes = [7]
"#;

#[test]
fn undeclared_node_reports_line() {
    let err = Scenario::parse(UNDECLARED).unwrap_err();
    match err {
        ScenarioError::Invalid { line, msg } => {
            assert_eq!(line, 4);
            assert!(msg.contains('7'), "{msg}");
        }
        e => panic!("unexpected {e:?}"),
    }
}

#[test]
fn undeclared_node_exits_nonzero() {
    let f = temp_scenario(UNDECLARED);
    let out = reconf(&["run", f.path().to_str().expect("utf-8 path")]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 4"), "{err}");
}

#[test]
fn unsorted_events_rejected() {
    let text = r#"name = "x"
nodes = [1, 2]

[[event]]
step = 10
action = "crash"
nodes = [1]

[[event]]
step = 5
action = "crash"
nodes = [2]
"#;
    let err = Scenario::parse(text).unwrap_err();
    assert!(matches!(err, ScenarioError::Invalid { line: 9, .. }), "{err:?}");
}

#[test]
fn unknown_field_is_parse_error() {
    let err = Scenario::parse("name = \"x\"\nnodes = [1]\nbogus = 3\n").unwrap_err();
    assert!(matches!(err, ScenarioError::Parse(_)), "{err:?}");
}

#[test]
fn unknown_checker_is_usage_error() {
    let out = reconf(&["run", &bundled("join-basic"), "--checkers", "nonsense"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_file_is_usage_error() {
    let out = reconf(&["run", "/nonexistent/scenario.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_flag_is_usage_error() {
    let out = reconf(&["run", &bundled("join-basic"), "--seed", "many"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn passing_run_exits_zero() {
    let out = reconf(&["run", &bundled("recma-collapse"), "--seed", "1"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.starts_with("recma-collapse seed=1 "), "{text}");
    assert!(text.contains("PASS trigger-fires"), "{text}");
}

#[test]
fn failing_checker_exits_one() {
    // The budget ends before the exhaustion fault is injected.
    let out = reconf(&["run", &bundled("counters-monotone"), "--budget", "50", "--checkers", "counter-exhaust"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL counter-exhaust"));
}

#[test]
fn trace_file_matches_library_run() {
    let dir = tempfile::tempdir().expect("temp dir");
    let path = dir.path().join("t.txt");
    let out = reconf(&[
        "run",
        &bundled("join-basic"),
        "--seed",
        "3",
        "--trace",
        path.to_str().expect("utf-8 path"),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let written = std::fs::read_to_string(&path).expect("trace written");
    let sc = Scenario::load(std::path::Path::new(&bundled("join-basic")))
        .expect("bundled scenario")
        .with_seed(3);
    assert_eq!(written, reconf_harness::run(&sc).trace.lines());
    let first = written.lines().next().expect("non-empty trace");
    assert_eq!(first.split('\t').count(), 4, "{first}");
}

#[test]
fn checkers_lists_all() {
    let out = reconf(&["checkers"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().count(), reconf_harness::CHECKERS.len());
}
