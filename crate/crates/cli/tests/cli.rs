use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_divkern"))
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, text).unwrap();
    p
}

fn run(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    bin().arg(cmd).arg("--config").arg(config).arg("--out").arg(out).args(extra).output().unwrap()
}

fn read_json(p: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

const SINE: &str = r#"{"kernel":{"kind":"sine","bandwidth":1.0},
    "grid":{"domain":{"kind":"interval","a":-20.0,"b":20.0},"n":200}}"#;

const PERTURBED: &str = r#"{"kernel":{"kind":"perturbed-sine","bandwidth":1.0,"poles":[[0.0,-1.0]]},
    "grid":{"domain":{"kind":"interval","a":-30.0,"b":30.0},"n":300}}"#;

#[test]
fn extract_ab_writes_table_and_residuals() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SINE);
    let out = tmp.path().join("out");
    let o = run("extract-ab", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = read_json(out.join("residuals.json"));
    assert!(r["max_residual"].as_f64().unwrap() < 1e-9);
    assert_eq!(r["tool"], "divkern");
    assert_eq!(r["config"]["grid"]["n"], 200);
    let csv = std::fs::read_to_string(out.join("ab.csv")).unwrap();
    assert!(csv.starts_with("# tool: divkern"));
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 201);
}

#[test]
fn poles_of_single_pole_model() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), PERTURBED);
    let out = tmp.path().join("out");
    let o = run("poles", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = read_json(out.join("poles.json"));
    let n = r["N"].as_array().unwrap();
    assert_eq!(n.len(), 1);
    assert!((n[0][0].as_f64().unwrap()).abs() < 1e-2);
    assert!((n[0][1].as_f64().unwrap() + 1.0).abs() < 1e-2);
}

#[test]
fn sample_dpp_is_bit_identical_for_a_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"kernel":{"kind":"sine","bandwidth":1.0},
            "grid":{"domain":{"kind":"interval","a":-3.14159,"b":3.14159},"n":60}}"#,
    );
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(run("sample-dpp", &cfg, &a, &["--seed", "42"]).status.success());
    assert!(run("sample-dpp", &cfg, &b, &["--seed", "42"]).status.success());
    assert_eq!(std::fs::read(a.join("points.csv")).unwrap(), std::fs::read(b.join("points.csv")).unwrap());
    let c = tmp.path().join("c");
    assert!(run("sample-dpp", &cfg, &c, &["--seed", "43", "--threads", "2"]).status.success());
    assert_ne!(std::fs::read(a.join("points.csv")).unwrap(), std::fs::read(c.join("points.csv")).unwrap());
}

#[test]
fn resolved_config_replays_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SINE);
    let a = tmp.path().join("a");
    assert!(run("gap-prob", &cfg, &a, &["--set", "params.s=0.5", "--seed", "7"]).status.success());
    let b = tmp.path().join("b");
    assert!(run("gap-prob", &a.join("resolved_config.json"), &b, &[]).status.success());
    assert_eq!(std::fs::read(a.join("gap.json")).unwrap(), std::fs::read(b.join("gap.json")).unwrap());
    assert_eq!(read_json(b.join("gap.json"))["s"], 0.5);
}

#[test]
fn schema_errors_exit_2_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SINE);
    let out = tmp.path().join("out");
    let o = run("extract-ab", &cfg, &out, &["--set", "params.nonsense=1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
    let bad = write_config(tmp.path(), r#"{"kernel":{"kind":"sine","bandwidth":1.0}}"#);
    assert_eq!(run("extract-ab", &bad, &out, &[]).status.code(), Some(2));
    let o = run("trace-report", &cfg, &out, &["--set", "params.window=[-30,1]"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
    let o = bin().arg("no-such-command").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn numeric_errors_exit_1_with_named_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"kernel":{"kind":"rank-one","profile":{"kind":"gaussian","center":0.0,"width":1.0}},
            "grid":{"domain":{"kind":"interval","a":-8.0,"b":8.0},"n":120}}"#,
    );
    let out = tmp.path().join("out");
    let o = run("continue", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    let e = read_json(out.join("error.json"));
    assert_eq!(e["error"]["name"], "StrongDivisionViolatedError");
    assert!(e["config"].is_object());
}

#[test]
fn thread_variable_is_validated() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SINE);
    let out = tmp.path().join("out");
    let o = bin()
        .env("DIVKERN_THREADS", "zero")
        .args(["kernel-eval", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = bin().env("DIVKERN_THREADS", "1").args(["kernel-eval", "--config"]).arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert!(o.status.success());
    let csv = std::fs::read_to_string(out.join("kernel.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 10);
}

#[test]
fn every_command_runs_on_a_small_model() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), PERTURBED);
    for cmd in [
        "extract-ab",
        "verify-division",
        "continue",
        "poles",
        "blaschke",
        "kernel-eval",
        "sample-dpp",
        "gap-prob",
        "trace-report",
        "stability",
    ] {
        let out = tmp.path().join(cmd);
        let o = run(cmd, &cfg, &out, &["--set", "params.window=[-5,5]"]);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(out.join("resolved_config.json").exists());
        assert!(std::fs::read_dir(&out).unwrap().all(|e| !e.unwrap().file_name().to_string_lossy().ends_with(".partial")));
    }
}
