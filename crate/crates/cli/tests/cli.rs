use std::path::Path;
use std::process::{Command, Output};

fn evkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evkit")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn malformed_input_is_fatal_with_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "bad.csv", "site_id,date,value\nA,1990,1\nA,1990,2\nB,19x0,3\n");
    let out = dir.path().join("out").display().to_string();
    let o = evkit(&["select-r", &input, "--out", &out]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3") && err.contains("duplicate"), "{err}");
    assert!(err.contains("line 4"), "{err}");
}

#[test]
fn wrong_header_is_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "h.csv", "site,date,value\nA,1990,1\n");
    let o = evkit(&["select-threshold", &input, "--out", &dir.path().join("o").display().to_string()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("site_id,date,value"));
}

#[test]
fn bad_arguments_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "a.csv", "site_id,date,value\nA,1990,1\n");
    let out = dir.path().join("o").display().to_string();
    assert_ne!(evkit(&["select-r", &input, "--out", &out, "--alpha", "1.5"]).status.code(), Some(0));
    assert_ne!(evkit(&["select-r", &input, "--out", &out, "--rule", "sideways"]).status.code(), Some(0));
    assert_ne!(evkit(&["select-threshold", &input, "--out", &out, "--test", "ks"]).status.code(), Some(0));
}

#[test]
fn short_sites_are_excluded_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let daily = dir.path().join("d.csv");
    let o = evkit(&["simulate", "--kind", "daily", "--sites", "2", "--years", "12", "--seed", "3", "--out", &daily.display().to_string()]);
    assert!(o.status.success());
    let mut text = std::fs::read_to_string(&daily).unwrap();
    text.push_str("Z,2000-01-01,1.0\nZ,2000-01-02,2.0\n");
    let input = write(dir.path(), "d2.csv", &text);
    let out = dir.path().join("o");
    let o = evkit(&["select-r", &input, "--out", &out.display().to_string(), "--rmax", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let sites = std::fs::read_to_string(out.join("sites.csv")).unwrap();
    let z = sites.lines().find(|l| l.starts_with("Z,")).unwrap();
    assert!(z.starts_with("Z,excluded,"), "{z}");
    let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(meta["sites"]["total"], 3);
    assert_eq!(meta["sites"]["excluded"], 1);
    assert_eq!(meta["schema_version"], 1);
}

#[test]
fn experiment_config_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "e.json",
        r#"{"scheme": {"scheme": "pure-gpd", "n": 50, "gpd": {"scale": 1.0, "shape": 0.1}}, "subject": {"subject": "test", "test": "moran"}, "replicates": 100, "alpha": 0.05}"#,
    );
    let out = dir.path().join("e.csv");
    let o = evkit(&["simulate", "--kind", "experiment", "--config", &cfg, "--seed", "1", "--out", &out.display().to_string()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("scheme,params,subject,metric,value,mc_error\n"));
    assert!(text.contains("rejection_rate"));
}
