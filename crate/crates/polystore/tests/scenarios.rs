use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use polystore::cluster::scenario::{Command as Step, Scenario, ScenarioError};

fn root() -> &'static Path {
    Path::new(env!("CARGO_MANIFEST_DIR"))
}

fn script(name: &str) -> PathBuf {
    root().join("scenarios").join(name)
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_polystore"))
}

#[test]
fn shipped_scripts_pass() {
    for entry in fs::read_dir(root().join("scenarios")).unwrap() {
        let path = entry.unwrap().path();
        let report = Scenario::load(&path).unwrap().run().unwrap();
        assert!(report.passed(), "{}: {:?}", path.display(), report.failures);
        assert!(!report.trace.is_empty());
    }
}

/// The recorded trace of a fixed seed must not drift. Regenerate with
/// `POLYSTORE_BLESS=1 cargo test --test scenarios` after an intended change.
#[test]
fn partition_heal_trace_is_stable() {
    let report = Scenario::load(&script("partition_heal.scn")).unwrap().run().unwrap();
    let text = report.trace.join("\n") + "\n";
    let golden = root().join("tests/golden/partition_heal.trace");
    if std::env::var_os("POLYSTORE_BLESS").is_some() {
        fs::write(&golden, &text).unwrap();
    }
    let want = fs::read_to_string(&golden).unwrap();
    assert_eq!(text.lines().count(), want.lines().count());
    assert!(text == want, "trace drifted from {}", golden.display());
}

#[test]
fn failed_expectation_is_reported() {
    let sc = Scenario::parse(
        "@bucket b 3 2 2\n\
         0 put b k one\n\
         10 expect b k two\n\
         20 !get b k\n",
    )
    .unwrap();
    assert_eq!(sc.steps[1].command, Step::Expect { bucket: "b".into(), key: "k".into(), value: Some("two".into()), via: None });
    let report = sc.run().unwrap();
    assert_eq!(report.failures.len(), 2, "{:?}", report.failures);
}

#[test]
fn parse_errors_name_the_line() {
    for (text, line) in [("@nodes a b\n@bucket b 3 4 2\n", 2), ("0 teleport a\n", 1), ("@delay 5 1\n", 1)] {
        match Scenario::parse(text) {
            Err(ScenarioError::Parse { line: got, .. }) => assert_eq!(got, line, "{text}"),
            other => panic!("{text}: {other:?}"),
        }
    }
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().to_str().unwrap();
    let ok = cli().args(["scenario", "run"]).arg(script("leader_failover.scn")).status().unwrap();
    assert_eq!(ok.code(), Some(0));

    let bad_script = dir.path().join("bad.scn");
    fs::write(&bad_script, "0 put b k v\n10 expect b k w\n").unwrap();
    assert_eq!(cli().args(["scenario", "run"]).arg(&bad_script).status().unwrap().code(), Some(1));

    let put = cli().args(["put", "--dir", data, "--bucket", "cars", "--key", "punto", "--value", "gpl"]).status().unwrap();
    assert_eq!(put.code(), Some(0));
    let get = cli()
        .args(["get", "--dir", data, "--bucket", "cars", "--key", "punto", "--expect", "gpl"])
        .output()
        .unwrap();
    assert_eq!(get.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&get.stdout).contains("gpl"));
    let wrong = cli().args(["get", "--dir", data, "--bucket", "cars", "--key", "punto", "--expect", "absent"]).status().unwrap();
    assert_eq!(wrong.code(), Some(1));

    assert_eq!(cli().args(["put", "--dir", data, "--bucket", "b", "--key", "k", "--value", "v", "--r", "5"]).status().unwrap().code(), Some(2));
    assert_eq!(cli().args(["bench", "run", "--layer", "sql"]).status().unwrap().code(), Some(2));
    assert_eq!(cli().arg("frobnicate").status().unwrap().code(), Some(2));

    let ring = cli().args(["ring", "dump"]).output().unwrap();
    assert_eq!(ring.status.code(), Some(0));
    assert!(!ring.stdout.is_empty());
}

#[test]
fn cli_bench_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench.csv");
    let status = cli()
        .args(["bench", "run", "--layer", "kv", "--records", "200", "--writers", "4", "--policy", "balanced", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let csv = fs::read_to_string(out).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "layer,records,writers,policy,wall_ms,ops_per_sec,errors,lag");
    assert!(lines[1].starts_with("kv,200,4,balanced,"));
}
