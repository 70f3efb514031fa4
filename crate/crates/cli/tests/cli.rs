use std::process::{Command, Output};

use serde_json::Value;

fn pspin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pspin")).args(args).env_remove("PSPIN_THREADS").output().unwrap()
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn constants_rerun_is_byte_identical_apart_from_wall_time() {
    let a = json(&pspin(&["constants", "--p", "3", "--N", "100"]));
    let b = json(&pspin(&["constants", "--p", "3", "--N", "100"]));
    assert_eq!(a["constants"], b["constants"]);
    assert_eq!(a["meta"]["command"], "constants");
    let e0 = a["constants"]["E_0"].as_f64().unwrap();
    assert!(e0 > 2.0 * (2.0f64 / 3.0).sqrt() && e0 < 2.0);
}

#[test]
fn invalid_parameters_exit_with_two() {
    assert_eq!(pspin(&["constants", "--p", "2", "--N", "10"]).status.code(), Some(2));
    assert_eq!(pspin(&["perturb", "--p", "3", "--N", "10", "--samples", "1", "--seed", "1", "--alpha", "0.6"]).status.code(), Some(2));
    assert_eq!(pspin(&["enumerate", "--p", "3", "--N", "5", "--restarts", "0", "--disorder-seed", "1", "--seed", "1"]).status.code(), Some(2));
    assert_eq!(pspin(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn unreadable_input_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    assert_eq!(pspin(&["report", missing.to_str().unwrap()]).status.code(), Some(3));
}

#[test]
fn thread_variable_overrides_the_flag() {
    let out = Command::new(env!("CARGO_BIN_EXE_pspin"))
        .args(["rmt", "--dim", "3", "--shift", "0", "--samples", "5000", "--seed", "1", "--threads", "3"])
        .env("PSPIN_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(json(&out)["meta"]["threads"], 2);
}

#[test]
fn enumeration_writes_and_rereads_the_disorder() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("j.bin");
    let f = file.to_str().unwrap();
    let args = ["enumerate", "--p", "3", "--N", "4", "--restarts", "500", "--disorder-seed", "7", "--seed", "2", "--disorder-file", f];
    let first = json(&pspin(&args));
    assert!(file.exists());
    // The stored disorder wins over a different seed.
    let mut again = args.to_vec();
    again[8] = "8";
    let second = json(&pspin(&again));
    assert_eq!(first["critical_points"], second["critical_points"]);
    let count = first["enumeration"]["count"].as_u64().unwrap();
    assert!(count >= 2 && count % 2 == 0);

    let mismatch = pspin(&[
        "enumerate", "--p", "3", "--N", "5", "--restarts", "10", "--disorder-seed", "1", "--seed", "1", "--disorder-file", f,
    ]);
    assert_eq!(mismatch.status.code(), Some(2));
}

#[test]
fn csv_output_has_a_fixed_header() {
    let out = pspin(&["rmt", "--dim", "2,3", "--shift", "-3,3", "--samples", "2000", "--seed", "4", "--format", "csv"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.split(',').count() > 2, "{header}");
    assert_eq!(lines.count(), 4);
}

#[test]
fn report_collects_headlines_from_saved_runs() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("k.json");
    let p = path.to_str().unwrap();
    assert!(pspin(&["constants", "--p", "4", "--N", "30", "--out", p]).status.success());
    let r = json(&pspin(&["report", p]));
    assert_eq!(r["meta"]["command"], "report");
}
