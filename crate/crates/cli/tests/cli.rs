use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cyclewalk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cyclewalk")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

const SRW: &str = r#"{"catalog": {"d": 2, "entries": [{"preset": "nn-2-cycles", "law": {"kind": "constant", "value": 0.5}}]}, "side": 16}"#;
const PLAQ: &str = r#"{"catalog": {"d": 2, "entries": [{"preset": "plaquette-rotations", "law": {"kind": "uniform", "low": 0.2, "high": 2.0}}]}, "side": 12}"#;

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

#[test]
fn version_prints_semver() {
    let out = cyclewalk(&["version"]);
    assert_eq!(code(&out), 0);
    let s = text(&out.stdout);
    let v = s.trim().strip_prefix("cyclewalk ").unwrap();
    assert_eq!(v.split('.').count(), 3, "{s}");
}

#[test]
fn unknown_command_is_a_usage_error() {
    let out = cyclewalk(&["frobnicate"]);
    assert_eq!(code(&out), 2);
    assert!(text(&out.stderr).contains("Usage:"));
    assert_eq!(code(&cyclewalk(&[])), 2);
}

#[test]
fn gen_env_then_check_env() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "env.json", PLAQ);
    let env = path(dir.path(), "env.bin");
    assert_eq!(code(&cyclewalk(&["gen-env", "--config", &cfg, "--seed", "7", "--out", &env])), 0);
    let report = path(dir.path(), "check.json");
    let out = cyclewalk(&["check-env", "--env", &env, "--report", &report]);
    assert_eq!(code(&out), 0, "{}", text(&out.stdout));
    let line = text(&out.stdout).lines().find(|l| l.starts_with("doubly_stochastic")).unwrap().to_string();
    assert!(line.contains("pass"), "{line}");
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert!(json["checks"].as_array().unwrap().iter().all(|c| c["pass"] == true));
}

#[test]
fn estimate_sigma_on_unit_conductances() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "env.json", SRW);
    let env = path(dir.path(), "env.bin");
    assert_eq!(code(&cyclewalk(&["gen-env", "--config", &cfg, "--seed", "7", "--out", &env])), 0);
    let csv = path(dir.path(), "sigma.csv");
    let out = cyclewalk(&["estimate-sigma", "--env", &env, "--lambda-schedule", "1e-1:1e-5:5", "--out", &csv]);
    assert_eq!(code(&out), 0);
    let body = fs::read_to_string(&csv).unwrap();
    let mut lines = body.lines();
    assert_eq!(lines.next(), Some("i,j,sigma2"));
    for l in lines {
        let f: Vec<&str> = l.split(',').collect();
        let v: f64 = f[2].parse().unwrap();
        let want = if f[0] == f[1] { 2.0 } else { 0.0 };
        assert!((v - want).abs() <= 1e-10, "{l}");
    }
    assert!(text(&out.stdout).contains("2.000000000000000e0"));
}

#[test]
fn malformed_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "env.json", &SRW.replace("\"side\": 16", "\"side\": \"big\""));
    let out = cyclewalk(&["gen-env", "--config", &cfg, "--out", &path(dir.path(), "e.bin")]);
    assert_eq!(code(&out), 2);
    let err = text(&out.stderr);
    assert!(err.contains("side") && err.contains("line 1"), "{err}");
    let cfg = write(dir.path(), "broken.json", "{\"catalog\": ");
    assert_eq!(code(&cyclewalk(&["gen-env", "--config", &cfg, "--out", &path(dir.path(), "e.bin")])), 2);
}

#[test]
fn missing_or_foreign_snapshot_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&cyclewalk(&["check-env", "--env", &path(dir.path(), "nope.bin")])), 2);
    let junk = write(dir.path(), "junk.bin", "not a snapshot at all");
    let out = cyclewalk(&["check-env", "--env", &junk]);
    assert_eq!(code(&out), 2);
    assert!(text(&out.stderr).contains("snapshot"));
}

#[test]
fn snapshot_version_mismatch_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "env.json", PLAQ);
    let env = path(dir.path(), "env.bin");
    assert_eq!(code(&cyclewalk(&["gen-env", "--config", &cfg, "--out", &env])), 0);
    let mut bytes = fs::read(&env).unwrap();
    bytes[8..12].copy_from_slice(&7u32.to_le_bytes());
    fs::write(&env, bytes).unwrap();
    let out = cyclewalk(&["check-env", "--env", &env]);
    assert_eq!(code(&out), 2);
    assert!(text(&out.stderr).contains("version 7"), "{}", text(&out.stderr));
}

#[test]
fn uncovered_catalog_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"{"catalog": {"d": 2, "entries": [{"steps": [1, 2, -1, -2], "law": {"kind": "constant", "value": 1}}]}, "side": 8}"#;
    let cfg = write(dir.path(), "env.json", body);
    let out = cyclewalk(&["gen-env", "--config", &cfg, "--out", &path(dir.path(), "e.bin")]);
    assert_eq!(code(&out), 2, "{}", text(&out.stderr));
}

#[test]
fn solver_failure_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "env.json", PLAQ);
    let env = path(dir.path(), "env.bin");
    assert_eq!(code(&cyclewalk(&["gen-env", "--config", &cfg, "--out", &env])), 0);
    let out = cyclewalk(&[
        "solve-corrector", "--env", &env, "--max-iter", "1", "--tol", "1e-15", "--out", &path(dir.path(), "s.bin"),
    ]);
    assert_eq!(code(&out), 3, "{}", text(&out.stderr));
}

#[test]
fn solve_corrector_writes_loadable_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "env.json", PLAQ);
    let env = path(dir.path(), "env.bin");
    assert_eq!(code(&cyclewalk(&["gen-env", "--config", &cfg, "--out", &env])), 0);
    let sol = path(dir.path(), "sol.bin");
    let report = path(dir.path(), "sol.json");
    let out = cyclewalk(&["solve-corrector", "--env", &env, "--out", &sol, "--report", &report]);
    assert_eq!(code(&out), 0);
    let s = cyclewalk_core::io::load_solution(Path::new(&sol)).unwrap();
    assert_eq!(s.lambda, 1e-5);
    assert!(s.sigma2.is_some());
}

#[test]
fn simulate_is_reproducible_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "env.json", PLAQ);
    let env = path(dir.path(), "env.bin");
    assert_eq!(code(&cyclewalk(&["gen-env", "--config", &cfg, "--out", &env])), 0);
    let a = path(dir.path(), "a.json");
    let b = path(dir.path(), "b.json");
    let ta = path(dir.path(), "a.csv");
    let tb = path(dir.path(), "b.csv");
    let common = ["simulate", "--env", &env, "--replicas", "300", "--horizon", "2", "--seed", "5", "--start=-1,2"];
    let mut args_a = common.to_vec();
    args_a.extend(["--threads", "1", "--out", &a, "--trajectory", &ta]);
    let mut args_b = common.to_vec();
    args_b.extend(["--threads", "4", "--out", &b, "--trajectory", &tb]);
    assert_eq!(code(&cyclewalk(&args_a)), 0);
    assert_eq!(code(&cyclewalk(&args_b)), 0);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(fs::read(&ta).unwrap(), fs::read(&tb).unwrap());
    assert!(fs::read_to_string(&ta).unwrap().starts_with("t,x1,x2\n0e0,-1,2\n"));
}

const LAB: &str = r#"{
    "env": {"catalog": {"d": 2, "entries": [{"preset": "plaquette-rotations", "law": {"kind": "uniform", "low": 0.2, "high": 2.0}}]}, "side": 12},
    "n": 4, "instances": 4, "trials": 30
}"#;

#[test]
fn inequality_lab_reports_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "lab.json", LAB);
    let a = path(dir.path(), "a");
    let b = path(dir.path(), "b");
    assert_eq!(code(&cyclewalk(&["inequality-lab", "--config", &cfg, "--out-dir", &a, "--seed", "3"])), 0);
    assert_eq!(code(&cyclewalk(&["--threads", "2", "inequality-lab", "--config", &cfg, "--out-dir", &b, "--seed", "3"])), 0);
    for f in ["inequalities.csv", "inequalities.json"] {
        assert_eq!(fs::read(Path::new(&a).join(f)).unwrap(), fs::read(Path::new(&b).join(f)).unwrap());
    }
    let csv = fs::read_to_string(Path::new(&a).join("inequalities.csv")).unwrap();
    assert!(csv.starts_with("check,instance,lhs,rhs,constant,ratio,pass\n"));
    assert_eq!(code(&cyclewalk(&["inequality-lab", "--config", &cfg, "--out-dir", &a, "--p", "1.5", "--q", "2"])), 2);
}

const EXPERIMENT: &str = r#"{
    "env": {"catalog": {"d": 2, "entries": [{"preset": "plaquette-rotations", "law": {"kind": "uniform", "low": 0.2, "high": 2.0}}]}, "side": 8, "seed": 2},
    "n_grid": [2, 4], "replicas": 400, "horizon": 1.0, "q": "inf", "compare_double_side": false
}"#;

#[test]
fn qfclt_report_emits_deterministic_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "exp.json", EXPERIMENT);
    let a = path(dir.path(), "a");
    let b = path(dir.path(), "b");
    let ra = cyclewalk(&["qfclt-report", "--config", &cfg, "--out-dir", &a]);
    let rb = cyclewalk(&["--threads", "3", "qfclt-report", "--config", &cfg, "--out-dir", &b]);
    assert!(matches!(code(&ra), 0 | 1), "{}", text(&ra.stderr));
    assert_eq!(code(&ra), code(&rb));
    for f in ["report.json", "covariance.csv", "ks.csv", "vanishing.csv", "sublinearity.csv"] {
        let x = fs::read(Path::new(&a).join(f)).unwrap();
        assert_eq!(x, fs::read(Path::new(&b).join(f)).unwrap(), "{f}");
    }
    let cov = fs::read_to_string(Path::new(&a).join("covariance.csv")).unwrap();
    assert!(cov.starts_with("n,cov11,cov12,cov21,cov22,frob_err\n"));
    let ks = fs::read_to_string(Path::new(&a).join("ks.csv")).unwrap();
    assert!(ks.starts_with("n,v_index,ks,p\n"));
    let few = cyclewalk(&["qfclt-report", "--config", &cfg, "--out-dir", &a, "--replicas", "10"]);
    assert_eq!(code(&few), 2);
}
