use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const MINIMAL: &str = r#"{"kernel":{"dimension":1,"lambda2":0.5,"scale":1.0},"mollifier":"gaussian","grid":{"n":1024,"length":4.0},"replicas":2,"seed":7}"#;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gmc-lab"))
        .args(args)
        .env_remove("GMC_LAB_THREADS")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn error_kind(out: &Output) -> String {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().unwrap_or_default();
    let v: Value = serde_json::from_str(line).unwrap_or_else(|_| panic!("stderr not JSON: {text}"));
    v["error"]["kind"].as_str().unwrap().to_string()
}

#[test]
fn simulate_then_replay_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", MINIMAL);
    let a = dir.path().join("a");
    let out = run(&["simulate", "--config", &cfg, "--out", a.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let manifest: Value = serde_json::from_slice(&std::fs::read(a.join("manifest.json")).unwrap()).unwrap();
    let files = manifest["files"].as_array().unwrap();
    assert_eq!(files.len(), 4);
    assert_eq!(manifest["config_digest"].as_str().unwrap().len(), 64);

    let b = dir.path().join("b");
    let m = a.join("manifest.json");
    let out = run(&["replay", m.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in files {
        let name = f["path"].as_str().unwrap();
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap());
    }

    // Thread count must not change the bytes.
    let c = dir.path().join("c");
    let out = run(&["--threads", "1", "simulate", "--config", &cfg, "--out", c.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(std::fs::read(a.join("mass_0001.bin")).unwrap(), std::fs::read(c.join("mass_0001.bin")).unwrap());
}

#[test]
fn tampered_output_fails_replay() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", MINIMAL);
    let a = dir.path().join("a");
    assert!(run(&["simulate", "--config", &cfg, "--out", a.to_str().unwrap()]).status.success());
    let text = std::fs::read_to_string(a.join("manifest.json")).unwrap();
    let mut m: Value = serde_json::from_str(&text).unwrap();
    m["files"][0]["sha256"] = Value::from("0".repeat(64));
    let path = write(dir.path(), "bad.json", &m.to_string());
    let out = run(&["replay", &path, "--out", dir.path().join("b").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn four_dimensions_refused_at_the_gate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", &MINIMAL.replace("\"dimension\":1", "\"dimension\":4"));
    let out = run(&["simulate", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("positive definite"));
    assert!(!dir.path().join("o").join("manifest.json").exists());
}

#[test]
fn critical_coupling_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", &MINIMAL.replace("\"lambda2\":0.5", "\"lambda2\":2.0"));
    let out = run(&["simulate", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_kind(&out), "validation");
}

#[test]
fn malformed_config_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", "{\"kernel\": 1");
    let out = run(&["estimate", "zeta", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn zeta_report_carries_digest_and_analytic_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", &MINIMAL.replace("1024", "4096"));
    let o = dir.path().join("o");
    let out = run(&["estimate", "zeta", "--config", &cfg, "--replicas", "40", "--out", o.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("zeta:"));

    let csv = std::fs::read_to_string(o.join("zeta.csv")).unwrap();
    let first = csv.lines().next().unwrap();
    let report: Value = serde_json::from_slice(&std::fs::read(o.join("zeta.json")).unwrap()).unwrap();
    let digest = report["provenance"]["config_digest"].as_str().unwrap();
    assert_eq!(first, format!("# config_digest: {digest}"));
    let two = report["fits"].as_array().unwrap().iter().find(|f| f["p"] == 2.0).unwrap();
    assert!((two["zeta"].as_f64().unwrap() - 1.5).abs() < 1e-12);
}

#[test]
fn scale_invariance_refuses_a_remainder() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = MINIMAL.replace("\"scale\":1.0}", "\"scale\":1.0,\"remainder\":{\"kind\":\"constant\",\"value\":0.1}}");
    let cfg = write(dir.path(), "c.json", &cfg);
    let out = run(&["estimate", "scale-invariance", "--config", &cfg, "--replicas", "40", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn degeneracy_verdicts_flip_across_the_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"kernel":{"dimension":1,"lambda2":1.5,"scale":1.0},"mollifier":"gaussian","grid":{"n":16384,"length":4.0},"replicas":200,"seed":3,"estimate":{"degeneracy":{"lambda2":[1.5,2.5]}}}"#;
    let cfg = write(dir.path(), "c.json", cfg);
    let o = dir.path().join("o");
    let out = run(&["estimate", "degeneracy", "--config", &cfg, "--out", o.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows: Value = serde_json::from_slice(&std::fs::read(o.join("degeneracy.json")).unwrap()).unwrap();
    let verdicts: Vec<&str> = rows.as_array().unwrap().iter().map(|r| r["verdict"].as_str().unwrap()).collect();
    assert_eq!(verdicts, ["stable", "degenerate"]);
}

#[test]
fn oracles_without_monte_carlo_pass() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().join("o");
    let out = run(&["oracles", "--mc-samples", "0", "--instances", "3", "--out", o.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("inconclusive"));
    let report: Value = serde_json::from_slice(&std::fs::read(o.join("oracles.json")).unwrap()).unwrap();
    assert_eq!(report["failed"], 0);
}

#[test]
fn non_psd_pair_refused() {
    let dir = tempfile::tempdir().unwrap();
    let pair = r#"{"x":{"covariance":[[1,2],[2,1]],"weights":[1,1]},"y":{"covariance":[[1,0],[0,1]],"weights":[1,1]}}"#;
    let p = write(dir.path(), "p.json", pair);
    let out = run(&["oracles", "--mc-samples", "0", "--instances", "1", "--pair", &p, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("semidefinite"));
}

#[test]
fn user_pair_adds_a_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let pair = r#"{"x":{"covariance":[[1,0.2],[0.2,1]],"weights":[1,1]},"y":{"covariance":[[1,0.5],[0.5,1]],"weights":[1,1]},"function":{"kind":"call","strike":0.5}}"#;
    let p = write(dir.path(), "p.json", pair);
    let o = dir.path().join("o");
    let out = run(&["oracles", "--mc-samples", "0", "--instances", "1", "--pair", &p, "--out", o.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&std::fs::read(o.join("oracles.json")).unwrap()).unwrap();
    let user = report["verdicts"].as_array().unwrap().iter().find(|v| v["instance"] == "user pair").unwrap();
    assert_eq!(user["status"], "pass");
}
