use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn uavbs(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uavbs"))
        .args(["--profile", "fast", "--seed", "2", "--out"])
        .arg(out)
        .args(args)
        .output()
        .unwrap()
}

fn assert_csv(path: &Path, schema: &str, first_column: &str) -> usize {
    let text = fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(format!("# uavbs {schema} schema v1").as_str()));
    assert!(lines.next().unwrap().starts_with(first_column), "{}", path.display());
    lines.count()
}

#[test]
fn smoke_run_writes_documented_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();

    let o = uavbs(out, &["sweep", "--phase", "1", "--load", "heavy"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(assert_csv(&out.join("sweep_p1_heavy.csv"), "sweep", "index"), 18);

    let o = uavbs(out, &["train", "--variant", "baseline"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(assert_csv(&out.join("steps.csv"), "steps", "variant") > 0);
    assert!(assert_csv(&out.join("iterations.csv"), "iterations", "variant") > 0);
    assert_eq!(assert_csv(&out.join("phases.csv"), "phases", "variant"), 9);
    assert_eq!(assert_csv(&out.join("table3.csv"), "table3", "row"), 2);

    for (kind, rows) in [("tilt", 28), ("position", 50)] {
        let o = uavbs(out, &["analyze", kind]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(assert_csv(&out.join(format!("{kind}_sweep.csv")), kind, "load"), rows);
    }

    let echo: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("effective_config.json")).unwrap()).unwrap();
    assert_eq!(echo["seed"], 2);
}

#[test]
fn validate_config_echoes_and_rejects() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.json");
    fs::write(&good, r#"{"seed": 9, "env": {"median_channel": true}}"#).unwrap();
    let o =
        Command::new(env!("CARGO_BIN_EXE_uavbs")).arg("--config").arg(&good).arg("validate-config").output().unwrap();
    assert!(o.status.success());
    let cfg: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(cfg["seed"], 9);
    assert_eq!(cfg["env"]["median_channel"], true);
    assert_eq!(cfg["env"]["traffic"]["arrival_rate_light"], 270.0);

    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"env": {"traffic": {"arrival_rate_light": -1}}}"#).unwrap();
    let o =
        Command::new(env!("CARGO_BIN_EXE_uavbs")).arg("--config").arg(&bad).arg("validate-config").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("arrival_rate_light"), "{err}");
}
