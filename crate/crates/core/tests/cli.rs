use std::path::Path;
use std::process::{Command, Output};

fn caplab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_caplab")).args(args).output().expect("binary runs")
}

#[test]
fn lists_every_experiment() {
    let out = caplab(&["list-experiments"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in caplab::config::EXPERIMENTS {
        assert!(text.contains(name), "{name} missing");
    }
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "name = \"choquet\"\nbogus = 1\n").unwrap();
    let out = caplab(&["run", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let out = caplab(&["run", "no-such-experiment"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(
        &cfg,
        "name = \"choquet\"\nseed = 3\n[domain]\nn = 1\nshape = { kind = \"ball\", radius = 1.0 }\nspacing = \"1/12\"\n[params]\ntrials = 4\n",
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = caplab(&["run", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "--format", "csv,json", "--strict"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["report.csv", "report.json"] {
        assert!(Path::new(&out_dir.join(f)).exists(), "{f} missing");
    }
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["name"], "choquet");
    assert_eq!(json["seed"], 3);
}

#[test]
fn capacity_prints_json() {
    let out = caplab(&["capacity", "functional", "--set", "ball:0.3", "--spacing", "1/16"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let c = v["value"].as_f64().unwrap();
    assert!(c > 0.0 && c.is_finite());
    assert_eq!(v["grid"]["n"], 1);
}
