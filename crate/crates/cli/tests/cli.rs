//! End-to-end exercises of the `spaceform` binary: exit-code contract,
//! report determinism, and the failure demos.

use std::path::PathBuf;
use std::process::{Command, Output};

fn spaceform(args: &[&str], out_dir: &PathBuf) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spaceform"))
        .args(args)
        .args(["--output-dir", out_dir.to_str().unwrap()])
        .output()
        .expect("binary runs")
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("spaceform-cli-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn geometry_verify_passes_and_reports_are_deterministic() {
    let dir = temp_dir("geom");
    let first = spaceform(&["geometry-verify", "--seed", "11"], &dir);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let report = std::fs::read(dir.join("geometry-verify.json")).unwrap();
    let second = spaceform(&["geometry-verify", "--seed", "11"], &dir);
    assert!(second.status.success());
    assert_eq!(report, std::fs::read(dir.join("geometry-verify.json")).unwrap());
    let json: serde_json::Value = serde_json::from_slice(&report).unwrap();
    for case in json["cases"].as_array().unwrap() {
        assert_eq!(case["pass"], serde_json::Value::Bool(true), "{case}");
    }
}

#[test]
fn corrupted_horosphere_kappa_is_a_config_error() {
    let dir = temp_dir("badkappa");
    let out = spaceform(&["geometry-verify", "--kappa", "2"], &dir);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("kappa"));
}

#[test]
fn unknown_scenario_is_a_config_error() {
    let dir = temp_dir("badid");
    let out = spaceform(&["solve", "--scenario", "no_such_domain"], &dir);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn inflated_robin_coefficient_loses_coercivity() {
    let dir = temp_dir("notcoercive");
    let out = spaceform(
        &["solve", "--scenario", "half_ball_strict_sub", "--kappa", "12.5", "--h", "0.1"],
        &dir,
    );
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not coercive"));
}

#[test]
fn solve_writes_solution_report_and_heatmap() {
    let dir = temp_dir("solve");
    let out = spaceform(&["solve", "--h", "0.08"], &dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text =
        std::fs::read_to_string(dir.join("solve-appendix_two_horospheres.json")).unwrap();
    let json: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert!(json["max_u"].as_f64().unwrap() <= 1e-8);
    assert!(json["solution"]["c_hat"].as_f64().unwrap() > 0.3);
    let svg =
        std::fs::read_to_string(dir.join("solve-appendix_two_horospheres.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
}

#[test]
fn hkr_on_a_closed_umbilical_circle_reports_a_small_gap() {
    let dir = temp_dir("hkr");
    let m = 400;
    let vertices: Vec<[f64; 2]> = (0..m)
        .map(|i| {
            let t = 2.0 * std::f64::consts::PI * i as f64 / m as f64;
            [t.cos(), 2.0 + t.sin()]
        })
        .collect();
    let path = dir.join("circle.json");
    std::fs::write(
        &path,
        serde_json::json!({
            "model": "half_space",
            "vertices": vertices,
            "closed": true,
            "support": null,
        })
        .to_string(),
    )
    .unwrap();
    let out = spaceform(&["hkr", "--polyline", path.to_str().unwrap(), "--h", "0.08"], &dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("hkr-circle.json")).unwrap())
            .unwrap();
    assert!(json["hkr"]["relative"].as_f64().unwrap().abs() < 1e-2);
}

#[test]
fn format_filter_suppresses_svg() {
    let dir = temp_dir("fmt");
    let out = spaceform(&["solve", "--h", "0.1", "--format", "json"], &dir);
    assert!(out.status.success());
    assert!(dir.join("solve-appendix_two_horospheres.json").exists());
    assert!(!dir.join("solve-appendix_two_horospheres.svg").exists());
}
