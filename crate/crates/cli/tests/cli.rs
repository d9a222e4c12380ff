use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> String {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "fixtures", name].iter().collect();
    p.to_string_lossy().into_owned()
}

fn rwk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rwk")).args(args).output().expect("spawn rwk")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).expect("json output")
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(rwk(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(rwk(&[]).status.code(), Some(1));
    assert_eq!(rwk(&["graphs", "enumerate"]).status.code(), Some(1));
    assert_eq!(rwk(&["--help"]).status.code(), Some(0));
}

#[test]
fn invalid_input_exits_one() {
    let missing = rwk(&["partition", "--target", "/nonexistent.json", "--source", &fixture("source_b1_3.json")]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("error"));
    let swapped = rwk(&["partition", "--target", &fixture("source_b1_3.json"), "--source", &fixture("target_n1.json")]);
    assert_eq!(swapped.status.code(), Some(1));
}

#[test]
fn fedosov_matches_golden() {
    let o = rwk(&["fedosov", "--n", "1", "--cutoff", "6", "--curvature", &fixture("connection_n1.txt")]);
    assert_eq!(o.status.code(), Some(0));
    let golden = std::fs::read_to_string(fixture("golden/fedosov_n1_c6.txt")).unwrap();
    assert_eq!(stdout(&o), golden);
}

#[test]
fn fedosov_json() {
    let o = rwk(&["--output", "json", "fedosov", "--n", "1", "--cutoff", "5", "--curvature", &fixture("connection_n1.txt")]);
    assert_eq!(o.status.code(), Some(0));
    let v = json(&o);
    assert_eq!(v["ok"], true);
    assert_eq!(v["residual_terms"], 0);
}

#[test]
fn partition_classes() {
    let o = rwk(&["graphs", "partition-classes", "--n", "3", "--b1", "1", "--output", "json"]);
    assert_eq!(json(&o)["count"], 4);
    let o = rwk(&["graphs", "partition-classes", "--n", "1", "--b1", "0", "--output", "json"]);
    let v = json(&o);
    assert_eq!(v["count"], 1);
    assert_eq!(v["classes"][0]["aut"], 12);
}

#[test]
fn enumerate_counts() {
    // Loop-free: only the theta graph on two vertices.
    let v = json(&rwk(&["graphs", "enumerate", "--vertices", "2", "--output", "json"]));
    assert_eq!(v["count"], 1);
    // K4, the double-edged square, and two disjoint thetas.
    let v = json(&rwk(&["graphs", "enumerate", "--vertices", "4", "--output", "json"]));
    assert_eq!(v["count"], 3);
    let v = json(&rwk(&["graphs", "enumerate", "--vertices", "4", "--connected", "--output", "json"]));
    assert_eq!(v["count"], 2);
}

#[test]
fn weight_of_theta() {
    let o = rwk(&["weights", "--graph", &fixture("theta.txt"), "--target", &fixture("target_n1.json"), "--output", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let v = json(&o);
    assert_eq!(v["weight"], "4");
    assert_eq!(v["aut"], 12);
}

#[test]
fn partition_values() {
    let run = |src: &str| json(&rwk(&["partition", "--target", &fixture("target_n1.json"), "--source", &fixture(src), "--output", "json"]))["total"].clone();
    assert_eq!(run("source_b1_3.json"), "-2");
    assert_eq!(run("source_b1_3_torsion.json"), "-40/9");
    assert_eq!(run("source_b1_4.json"), "0");
}

#[test]
fn partition_respects_thread_cap() {
    let o = Command::new(env!("CARGO_BIN_EXE_rwk"))
        .args(["partition", "--target", &fixture("target_n1.json"), "--source", &fixture("source_b1_3.json")])
        .env("RWK_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("-2\n"));
}

#[test]
fn rg_check_fixtures() {
    let v = json(&rwk(&["rg", "check", "--fixture", &fixture("rg_fixture.json"), "--output", "json"]));
    assert_eq!(v["consistent"], true);
    assert_eq!(v["qme_residual_min_hbar"], 0);
    let v = json(&rwk(&["rg", "check", "--fixture", &fixture("rg_cme_fixture.json"), "--output", "json"]));
    assert_eq!(v["consistent"], true);
    assert_eq!(v["qme_residual_min_hbar"], 1);
}

#[test]
fn heat_verification_passes() {
    let o = rwk(&["verify", "heat-asymptotics"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 9);
    assert!(text.lines().all(|l| l.starts_with("PASS")));
}
