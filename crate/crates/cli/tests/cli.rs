use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_intertwine"))
        .args(args)
        .env_remove("INTERTWINE_TOL")
        .output()
        .expect("binary runs")
}

fn write(dir: &TempDir, name: &str, text: &str) -> String {
    let path = dir.path().join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const GOLDEN: &str = r#"{"N":2,"b":[1.0,1.0],"d":[1.0,0.0]}"#;

#[test]
fn single_state_spectrum() {
    let dir = TempDir::new().unwrap();
    let spec = write(&dir, "one.json", r#"{"N":1,"b":[1.0],"d":[0.0]}"#);
    let out = run(&["spectrum", "--spec", &spec]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(
        String::from_utf8(out.stdout).unwrap(),
        "{\"lambdas\":[1.0]}\n"
    );
}

#[test]
fn spectrum_identities_are_reported() {
    let dir = TempDir::new().unwrap();
    let spec = write(&dir, "golden.json", GOLDEN);
    let out = run(&["spectrum", "--spec", &spec, "--check-identities"]);
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    let l: Vec<f64> = v["lambdas"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect();
    let s5 = 5f64.sqrt();
    assert!((l[0] - (3.0 - s5) / 2.0).abs() < 1e-15);
    assert!((l[1] - (3.0 + s5) / 2.0).abs() < 1e-15);
    assert!(v["identities"]["trace"].as_f64().unwrap() < 1e-14);
}

#[test]
fn golden_spec_verifies() {
    let dir = TempDir::new().unwrap();
    let spec = write(&dir, "golden.json", GOLDEN);
    let out = run(&["verify", "--spec", &spec]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let v = stdout_json(&out);
    assert_eq!(v["passed"], Value::Bool(true));
    for c in v["checks"].as_array().unwrap() {
        let name = c["name"].as_str().unwrap();
        if name.ends_with("residual") {
            assert!(c["value"].as_f64().unwrap() <= 1e-10, "{name}");
        }
    }
}

#[test]
fn zero_birth_rate_is_a_malformed_spec() {
    let dir = TempDir::new().unwrap();
    let spec = write(&dir, "bad.json", r#"{"N":2,"b":[1.0,0.0],"d":[1.0,0.0]}"#);
    let out = run(&["verify", "--spec", &spec]);
    assert_eq!(out.status.code(), Some(2));
    let msg = stderr(&out);
    assert!(msg.contains("b_2") && msg.contains("positive"), "{msg}");
}

#[test]
fn schema_violations_exit_with_status_two() {
    let dir = TempDir::new().unwrap();
    for (name, text) in [
        ("len.json", r#"{"N":2,"b":[1.0],"d":[1.0,0.0]}"#),
        ("extra.json", r#"{"N":1,"b":[1.0],"d":[0.0],"x":1}"#),
        ("notstopped.json", r#"{"N":2,"b":[1.0,1.0],"d":[1.0,2.0]}"#),
        ("garbage.json", "not json"),
    ] {
        let spec = write(&dir, name, text);
        let out = run(&["spectrum", "--spec", &spec]);
        assert_eq!(out.status.code(), Some(2), "{name}: {}", stderr(&out));
    }
}

#[test]
fn missing_file_exits_with_status_three() {
    let out = run(&["spectrum", "--spec", "/nonexistent/spec.json"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn unwritable_output_exits_with_status_three() {
    let out = run(&[
        "spectrum",
        "--random-spec",
        "3",
        "1",
        "-o",
        "/nonexistent/dir/out.json",
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn output_is_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let spec = write(&dir, "golden.json", GOLDEN);
    let cases: Vec<Vec<&str>> = vec![
        vec!["spectrum", "--random-spec", "6", "2", "--check-identities"],
        vec!["kernels", "--random-spec", "5", "4"],
        vec!["verify", "--random-spec", "4", "9"],
        vec![
            "passage", "--spec", &spec, "--start", "1", "--t-grid", "0:3:7",
        ],
        vec![
            "simulate",
            "--random-spec",
            "3",
            "7",
            "--paths",
            "500",
            "--seed",
            "11",
        ],
    ];
    for args in cases {
        let a = run(&args);
        let b = run(&args);
        assert_eq!(a.status.code(), Some(0), "{args:?}: {}", stderr(&a));
        assert_eq!(a.stdout, b.stdout, "{args:?}");
    }
}

#[test]
fn kernels_artifacts_round_trip_through_verify() {
    let dir = TempDir::new().unwrap();
    let artifacts = dir.path().join("kernels.json");
    let artifacts = artifacts.to_str().unwrap();
    let out = run(&["kernels", "--random-spec", "5", "3", "-o", artifacts]);
    assert_eq!(out.status.code(), Some(0));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(artifacts).unwrap()).unwrap();
    assert_eq!(v["plus"]["stages"].as_array().unwrap().len(), 4);
    assert_eq!(v["minus"]["rates"].as_array().unwrap().len(), 5);
    let out = run(&["verify", "--artifacts", artifacts]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    // move mass between two columns of one composed-kernel row
    let mut v = v;
    let row = v["minus"]["composed"][2].as_array_mut().unwrap();
    let shift = 0.01;
    row[0] = Value::from(row[0].as_f64().unwrap() + shift);
    row[1] = Value::from(row[1].as_f64().unwrap() - shift);
    let tampered = write(&dir, "tampered.json", &v.to_string());
    let out = run(&["verify", "--artifacts", &tampered]);
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr(&out).contains("minus.composed_residual"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn tolerance_comes_from_flag_or_environment() {
    let out = run(&["verify", "--random-spec", "3", "2", "--tol", "1e-30"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("residual"), "{}", stderr(&out));
    let out = Command::new(env!("CARGO_BIN_EXE_intertwine"))
        .args(["verify", "--random-spec", "3", "2"])
        .env("INTERTWINE_TOL", "1e-30")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = run(&["verify", "--random-spec", "3", "2", "--tol", "-1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn passage_table_and_csv_agree() {
    let dir = TempDir::new().unwrap();
    let spec = write(&dir, "golden.json", GOLDEN);
    let csv = dir.path().join("table.csv");
    let out = run(&[
        "passage",
        "--spec",
        &spec,
        "--t-grid",
        "0:2:5",
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let v = stdout_json(&out);
    assert!(v["max_abs_diff"].as_f64().unwrap() <= 1e-8);
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 5);
    // closed form 1 - (λ2 e^{-λ1 t} - λ1 e^{-λ2 t}) / (λ2 - λ1) at t = 1
    let s5 = 5f64.sqrt();
    let (l1, l2) = ((3.0 - s5) / 2.0, (3.0 + s5) / 2.0);
    let exact = 1.0 - (l2 * (-l1).exp() - l1 * (-l2).exp()) / (l2 - l1);
    assert!((rows[2]["closed_form"].as_f64().unwrap() - exact).abs() < 1e-14);
    let table = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "t,closed_form,oracle,diff");
    assert_eq!(lines.len(), 6);
    let fields: Vec<f64> = lines[3].split(',').map(|f| f.parse().unwrap()).collect();
    assert_eq!(fields[1], rows[2]["closed_form"].as_f64().unwrap());
}

#[test]
fn bad_grid_and_state_are_rejected() {
    let out = run(&["passage", "--random-spec", "2", "1", "--t-grid", "0:1:1"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&[
        "passage",
        "--random-spec",
        "2",
        "1",
        "--t-grid",
        "0:1:3",
        "--start",
        "9",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn simulate_records_paths() {
    let dir = TempDir::new().unwrap();
    let record = dir.path().join("paths.jsonl");
    let out = run(&[
        "simulate",
        "--random-spec",
        "3",
        "5",
        "--paths",
        "300",
        "--seed",
        "2",
        "--record-paths",
        record.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let v = stdout_json(&out);
    assert_eq!(v["report"]["n_paths"], Value::from(300));
    assert_eq!(v["report"]["violations"]["sandwich"], Value::from(0));
    let text = std::fs::read_to_string(Path::new(&record)).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 300);
    let first: Value = serde_json::from_str(lines[0]).unwrap();
    assert_eq!(first["events"][0]["state"], serde_json::json!([0, 0, 0]));
    let last = first["events"].as_array().unwrap().last().unwrap();
    assert_eq!(last["state"], serde_json::json!([3, 3, 3]));
    assert_eq!(last["time"], first["tau"]);
}

#[test]
fn missing_chain_is_reported() {
    let out = run(&["spectrum"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--spec"));
}
