use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_amalgo"))
}

fn write(dir: &Path, name: &str, content: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, content).unwrap();
    p.to_str().unwrap().to_string()
}

fn s1_json() -> &'static str {
    r#"{
        "schema": "amalgo/1",
        "name": "S1",
        "factor1": {"generator": "complete", "params": [2]},
        "adhesion1": [["0"], ["1"]],
        "factor2": {"generator": "complete", "params": [2]},
        "adhesion2": [["0"], ["1"]]
    }"#
}

fn s2_json() -> &'static str {
    r#"{
        "schema": "amalgo/1",
        "name": "S2",
        "factor1": {"generator": "cycle", "params": [3]},
        "adhesion1": [["0"], ["1"], ["2"]],
        "factor2": {"generator": "complete", "params": [2]},
        "adhesion2": [["0"], ["1"]]
    }"#
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn build_exports_schema_tagged_ball() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "s1.json", s1_json());
    let out = bin().args(["build", &spec, "-r", "3"]).output().unwrap();
    assert!(out.status.success());
    let j = stdout_json(&out);
    assert_eq!(j["schema"], "amalgo/1");
    assert_eq!(j["radius"], 3);
    assert!(j["vertices"].as_array().unwrap().len() >= 4);
}

#[test]
fn malformed_spec_exits_2_with_error_json() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(
        dir.path(),
        "broken.json",
        // adhesion cardinalities differ: {0,1} vs {0}
        r#"{
            "schema": "amalgo/1",
            "factor1": {"generator": "complete", "params": [2]},
            "adhesion1": [["0", "1"]],
            "factor2": {"generator": "complete", "params": [2]},
            "adhesion2": [["0"]]
        }"#,
    );
    let out = bin().args(["build", &spec]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let j: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(j["schema"], "amalgo/1");
    assert!(j["error"]["kind"].is_string());
}

#[test]
fn verify_psi_passes_and_bad_claim_fails_with_witness() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "s1.json", s1_json());
    let out = bin()
        .args(["verify", &spec, "--map", "psi", "-r", "4,6"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout_json(&out)["verdict"], "pass");

    let spec2 = write(dir.path(), "s2.json", s2_json());
    let out = bin()
        .args([
            "verify", &spec2, "--map", "psi", "-r", "4", "--claim-gamma", "1", "--claim-c", "0",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let j = stdout_json(&out);
    assert_eq!(j["verdict"], "fail");
    assert!(j["witness"]["kind"].is_string());
}

#[test]
fn ends_reports_double_ray_class() {
    let dir = tempfile::tempdir().unwrap();
    let g = write(dir.path(), "g.json", r#"{"generator": "doubleray"}"#);
    let out = bin().args(["ends", &g, "-r", "3"]).output().unwrap();
    assert!(out.status.success());
    let j = stdout_json(&out);
    assert_eq!(j["estimate"]["class"], "2");
    assert_eq!(j["estimate"]["census"], 2);
}

#[test]
fn dist_on_cycle() {
    let dir = tempfile::tempdir().unwrap();
    let g = write(dir.path(), "g.json", r#"{"generator": "cycle", "params": [5]}"#);
    let out = bin().args(["dist", &g, "0", "3", "-r", "5"]).output().unwrap();
    assert!(out.status.success());
    assert_eq!(stdout_json(&out)["distance"], 2);
}

#[test]
fn calc_decide_and_normal_form() {
    let dir = tempfile::tempdir().unwrap();
    let alpha = r#"{"leaf": {"name": "alpha", "ends": "inf", "accessible": true}}"#;
    let fin = r#"{"leaf": {"name": "f", "ends": "0", "accessible": true}}"#;
    let a = write(
        dir.path(),
        "a.json",
        &format!(
            r#"{{"node": {{"left": {alpha}, "right": {{"node": {{"left": {alpha}, "right": {fin}, "nontrivial": true, "finite_adhesion": true, "star": false}}}}, "nontrivial": true, "finite_adhesion": true, "star": false}}}}"#
        ),
    );
    let b = write(
        dir.path(),
        "b.json",
        &format!(
            r#"{{"node": {{"left": {alpha}, "right": {fin}, "nontrivial": true, "finite_adhesion": true, "star": false}}}}"#
        ),
    );
    let out = bin().args(["calc", "decide", &a, &b]).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout_json(&out)["decision"], "equivalent");

    let out = bin().args(["calc", "normal-form", &a]).output().unwrap();
    assert!(out.status.success());
    let j = stdout_json(&out);
    assert_eq!(j["classification"]["FreeLike"]["types"][0], "alpha");

    // one-ended root: no normal form, input error
    let one = write(
        dir.path(),
        "one.json",
        r#"{"leaf": {"name": "z", "ends": "1", "accessible": true}}"#,
    );
    let out = bin().args(["calc", "normal-form", &one]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn artifacts_are_byte_identical_across_runs_and_job_counts() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "s2.json", s2_json());
    let mut artifacts = Vec::new();
    for (name, jobs) in [("a.json", "1"), ("b.json", "8"), ("c.json", "1")] {
        let out_path = dir.path().join(name);
        let out = bin()
            .args([
                "verify",
                &spec,
                "--map",
                "psi",
                "-r",
                "4",
                "--jobs",
                jobs,
                "--out",
                out_path.to_str().unwrap(),
            ])
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        artifacts.push(fs::read(&out_path).unwrap());
    }
    assert_eq!(artifacts[0], artifacts[1], "jobs=1 vs jobs=8 differ");
    assert_eq!(artifacts[0], artifacts[2], "identical runs differ");
}

#[test]
fn ball_formats() {
    let dir = tempfile::tempdir().unwrap();
    let g = write(dir.path(), "g.json", r#"{"generator": "cycle", "params": [5]}"#);
    let dot = bin()
        .args(["ball", &g, "-r", "2", "--format", "dot"])
        .output()
        .unwrap();
    assert!(dot.status.success());
    assert!(String::from_utf8_lossy(&dot.stdout).starts_with("graph"));
    let el = bin()
        .args(["ball", &g, "-r", "2", "--format", "edgelist"])
        .output()
        .unwrap();
    assert!(el.status.success());
    assert!(String::from_utf8_lossy(&el.stdout).lines().count() >= 4);
}
