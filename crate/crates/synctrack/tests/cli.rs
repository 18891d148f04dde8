use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use synctrack::io::bundled_case;
use synctrack_core::analysis::{cct_search, FaultSpec};
use synctrack_core::engine::Scenario;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_synctrack")).args(args).output().unwrap()
}

fn json_stdout(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn simulate_flat_case() {
    let dir = tempfile::tempdir().unwrap();
    let scen = write(dir.path(), "flat.json", r#"{ "case": "two_machine", "integration": { "t_end": 1.0 } }"#);
    let out_dir = dir.path().join("out");
    let v = json_stdout(&run(&["simulate", "--scenario", &scen, "--out", out_dir.to_str().unwrap()]));
    assert_eq!(v["stability"], "stable");
    assert!(v["max_speed_deviation"].as_f64().unwrap() < 1e-9);

    let mut rdr = csv::Reader::from_path(out_dir.join("trajectory.csv")).unwrap();
    let header = rdr.headers().unwrap().clone();
    assert_eq!(&header[0], "t");
    assert!(header.iter().any(|h| h == "omega_G1"));
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    // quarter-cycle steps over one second
    assert_eq!(rows.len(), 241);
    assert!(out_dir.join("summary.json").exists());
}

#[test]
fn rootlocus_writes_one_row_per_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let v = json_stdout(&run(&["rootlocus", "--case", "ninebus", "--param", "alpha1", "--grid", "0:0.1:1", "--out", out]));
    assert_eq!(v["grid"].as_array().unwrap().len(), 11);
    assert!(v["failed"].as_array().unwrap().is_empty());
    let mut rdr = csv::Reader::from_path(dir.path().join("loci.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    let first_track: Vec<_> = rows.iter().filter(|r| &r[0] == "0").collect();
    assert_eq!(first_track.len(), 11);
}

#[test]
fn cct_matches_library() {
    let v = json_stdout(&run(&[
        "cct", "--case", "smib", "--fault", "bus1", "--branch", "L12a", "--bracket", "0.02,0.6",
    ]));
    let s = Scenario::new(bundled_case("smib").unwrap());
    let b = cct_search(&s, &FaultSpec::bus_fault(0.1, 1, Some("L12a".into())), 0.02, 0.6).unwrap();
    assert_eq!(v["cct_s"].as_f64().unwrap(), b.value);
    assert_eq!(v["first_unstable_s"].as_f64().unwrap(), b.unstable);
}

#[test]
fn empty_sweep_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let list = write(dir.path(), "none.json", "[]");
    let out = dir.path().join("sweep");
    let v = json_stdout(&run(&["sweep", "--case", "smib", "--contingencies", &list, "--out", out.to_str().unwrap()]));
    assert_eq!(v["contingencies"], 0);
    assert!(out.join("summary.csv").exists());
}

#[test]
fn sweep_results_do_not_depend_on_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let scen = write(dir.path(), "s.json", r#"{ "case": "ninebus", "integration": { "t_end": 1.5 }, "seed": 3 }"#);
    let report = |jobs: &str| {
        let out = dir.path().join(format!("jobs{jobs}"));
        json_stdout(&run(&["sweep", "--scenario", &scen, "--jobs", jobs, "--out", out.to_str().unwrap()]));
        std::fs::read_to_string(out.join("summary.json")).unwrap()
    };
    assert_eq!(report("1"), report("4"));
}

#[test]
fn usage_and_domain_errors_have_distinct_codes() {
    assert_eq!(run(&["simulate", "--case", "no_such_case"]).status.code(), Some(2));
    assert_eq!(run(&["bogus"]).status.code(), Some(2));
    // the whole bracket is stable
    let out = run(&["cct", "--case", "smib", "--fault", "1", "--branch", "L12a", "--bracket", "0.01,0.02"]);
    assert_eq!(out.status.code(), Some(1));
}
