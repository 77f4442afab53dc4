use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn spikesolve(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spikesolve"))
        .args(args)
        .current_dir(dir)
        .env_remove("SPIKESOLVE_THREADS")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn simulate_solve_certify_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let o = spikesolve(&["simulate", "--scenario", "single-spike-fourier", "--out", "sim"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d.join("sim/measure.json").exists());
    let samples: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("sim/samples.json")).unwrap()).unwrap();
    assert_eq!(samples["kind"], "fourier");
    assert_eq!(samples["values"].as_array().unwrap().len(), 257);

    let o = spikesolve(
        &["solve", "--samples", "sim/samples.json", "--truth", "sim/measure.json", "--out", "fit"],
        d,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(header(&d.join("fit/dualpoly.csv")), "x,|P(x)|,arg P(x)");
    assert_eq!(
        header(&d.join("fit/spikes.csv")),
        "spike_id,amplitude,threshold,radius,nearest_truth_distance,contained"
    );
    let res: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("fit/result.json")).unwrap()).unwrap();
    assert_eq!(res["optimality"]["passed"], true);
    assert!(d.join("fit/guarantees.json").exists());

    let o = spikesolve(&["certify", "--measure", "sim/measure.json", "--fc", "128", "--out", "cert"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let cert: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("cert/certificate.json")).unwrap()).unwrap();
    for key in ["passed", "C_a", "C_b", "phase_residual", "qic_margin", "grid_size"] {
        assert!(cert.get(key).is_some(), "certificate.json lacks {key}");
    }
    assert_eq!(cert["passed"], true);
}

#[test]
fn explicit_lambda_flag_is_used() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(code(&spikesolve(&["simulate", "--scenario", "single-spike-fourier"], d)), 0);
    let o = spikesolve(&["solve", "--samples", "samples.json", "--lambda", "500", "--out", "fit"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let res: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("fit/result.json")).unwrap()).unwrap();
    assert_eq!(res["lambda"].as_f64(), Some(500.0));
}

#[test]
fn configuration_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("bad.json"), "{ \"trials\": \"many\" }").unwrap();
    assert_eq!(code(&spikesolve(&["run", "--config", "bad.json"], d)), 1);
    assert_eq!(code(&spikesolve(&["run", "--scenario", "no-such-scenario"], d)), 1);
    assert_eq!(code(&spikesolve(&["run", "--lambda", "-3"], d)), 1);
    assert_eq!(code(&spikesolve(&["solve", "--samples", "missing.json"], d)), 1);
    assert_eq!(code(&spikesolve(&["calibrate", "--family", "fourier"], d)), 1);
    assert_eq!(code(&spikesolve(&["no-such-command"], d)), 1);
    let o = Command::new(env!("CARGO_BIN_EXE_spikesolve"))
        .args(["simulate"])
        .current_dir(d)
        .env("SPIKESOLVE_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
}

#[test]
fn calibrate_writes_the_table() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let o = spikesolve(
        &["calibrate", "--family", "chebyshev:16", "--trials", "200", "--grid", "1024", "--seed", "3"],
        d,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(d.join("calibration.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "u,analytic_bound,regime_valid,mc_exceedance,mc_low,mc_high,trials");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 5);
    for r in rows {
        let cells: Vec<&str> = r.split(',').collect();
        assert_eq!(cells.len(), 7);
        assert_eq!(cells[6], "200");
    }
}

#[test]
fn runs_are_byte_identical_and_reportable() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let args = |out: &'static str| ["run", "--scenario", "five-spikes-fourier", "--trials", "4", "--out", out];
    let o = spikesolve(&args("a"), d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = Command::new(env!("CARGO_BIN_EXE_spikesolve"))
        .args(args("b"))
        .current_dir(d)
        .env("SPIKESOLVE_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    let mut names: Vec<_> = fs::read_dir(d.join("a")).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.iter().any(|n| n == "results.json"));
    assert!(names.iter().any(|n| n == "guarantees.json"));
    for n in &names {
        let a = fs::read(d.join("a").join(n)).unwrap();
        let b = fs::read(d.join("b").join(n)).unwrap();
        assert!(a == b, "{n:?} differs between runs");
    }
    let o = spikesolve(&["report", "a"], d);
    assert_eq!(code(&o), 0);
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("scenario: five-spikes-fourier"), "{out}");
    assert_eq!(code(&spikesolve(&["report", "nowhere"], d)), 1);
}
