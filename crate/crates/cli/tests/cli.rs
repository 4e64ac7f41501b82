use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn diffplan(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_diffplan")).args(args).current_dir(dir).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = diffplan(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

const STRAIGHT: &str = r#"{"dt": 0.5, "points": [[2,0,0.5],[4,0,1.0],[6,0,1.5],[8,0,2.0],[10,0,2.5],[12,0,3.0]]}"#;

#[test]
fn score_prints_breakdown() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("traj.json"), STRAIGHT).unwrap();
    fs::write(
        d.join("scene.json"),
        r#"{"obstacles": [], "lane_center": [[0,0],[30,0]], "target": {"point": [12,0], "heading": 0, "speed": 4}}"#,
    )
    .unwrap();
    fs::write(
        d.join("weights.json"),
        r#"{"w_coll":5.0,"w_deviation":3.5,"w_dis":1.5,"w_speed":2.5,"w_lat":1.5,"w_lon":4.5,"w_cent":3.0}"#,
    )
    .unwrap();
    let out = ok(d, &["score", "--trajectory", "traj.json", "--scene", "scene.json", "--weights", "weights.json"]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!(v["c_total"].as_f64().unwrap().abs() < 1e-12, "{out}");
    assert_eq!(v["hard_collision"], false);

    fs::write(
        d.join("scene2.json"),
        r#"{"obstacles": [{"center": [6, 0], "radius": 0.5}], "lane_center": [[0,0],[30,0]], "target": {"point": [12,0], "heading": 0, "speed": 4}}"#,
    )
    .unwrap();
    let out = ok(d, &["score", "--trajectory", "traj.json", "--scene", "scene2.json"]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["hard_collision"], true);
    assert!((v["c_coll"].as_f64().unwrap() - 1f64.exp()).abs() < 1e-12);

    fs::write(d.join("bad.json"), r#"{"w_coll": 1.0, "w_bogus": 2.0}"#).unwrap();
    assert!(!diffplan(d, &["score", "--trajectory", "traj.json", "--scene", "scene.json", "--weights", "bad.json"]).status.success());
}

#[test]
fn comfort_of_identical_trajectories_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("a.json"), STRAIGHT).unwrap();
    let out = ok(d, &["comfort", "--pred", "a.json", "--truth", "a.json"]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["total"]["c"].as_f64().unwrap(), 0.0);
    assert_eq!(v["total"]["c_p"].as_f64().unwrap(), 100.0);
    let csv = ok(d, &["comfort", "--pred", "a.json", "--truth", "a.json", "--csv"]);
    assert!(csv.starts_with("horizon,C,C_n,C_p\n"));
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn expert_pipeline_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["simulate", "--planner", "expert", "--count", "3", "--seed", "4", "--out-dir", "eps"]);
    let csv = ok(d, &["eval", "--episodes", "eps", "--out", "out/metrics.csv"]);
    assert_eq!(fs::read_to_string(d.join("out/metrics.csv")).unwrap(), csv);
    let row: Vec<f64> = csv.lines().nth(1).unwrap().split(',').map(|f| f.parse().unwrap()).collect();
    assert_eq!(row[0], 3.0);
    assert_eq!(row[5], 0.0, "expert playback has zero L2");

    ok(d, &["report", "--episodes", "eps", "--out", "rep/report.json"]);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("rep/report.json")).unwrap()).unwrap();
    assert!(report["l2_convention"].as_str().unwrap().contains("same absolute time"));
    assert!(report["metrics"]["fps"].as_f64().unwrap() > 0.0);
    for f in ["metrics.csv", "comfort.csv", "comfort_by_kind.csv"] {
        assert!(d.join("rep").join(f).exists(), "{f}");
    }
}

#[test]
fn bad_arguments_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = diffplan(d, &["simulate", "--planner", "expert", "--scenario-kind", "bogus"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
    assert!(!diffplan(d, &["simulate", "--count", "1"]).status.success(), "diffusion planner needs a checkpoint");
    assert!(!diffplan(d, &["gen-data", "--n", "0", "--out", "x.bin"]).status.success());
    assert!(!diffplan(d, &["eval", "--episodes", ".", "--out", "m.csv"]).status.success());
    let out = diffplan(d, &["simulate", "--planner", "expert", "--provider", "http"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--provider-url"));
}
