use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_elreduce"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run(args: &[&str], cfg: &Path, out: &Path) -> Output {
    bin().args(args).arg("--config").arg(cfg).arg("--out").arg(out).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Every file the manifest lists exists and parses as CSV or JSON.
fn check_manifest(dir: &Path, name: &str) -> Value {
    let m: Value = serde_json::from_str(&fs::read_to_string(dir.join(name)).unwrap()).unwrap();
    for f in m["outputs"].as_array().unwrap() {
        let f = f.as_str().unwrap();
        let body = fs::read_to_string(dir.join(f)).unwrap_or_else(|_| panic!("{f} missing"));
        if f.ends_with(".json") {
            serde_json::from_str::<Value>(&body).unwrap();
        } else {
            let mut lines = body.lines();
            let width = lines.next().unwrap().split(',').count();
            assert!(lines.all(|l| l.split(',').count() == width), "{f} is ragged");
        }
    }
    m
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path).unwrap().lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect()
}

fn with_alpha(base: &str, alpha: f64, dir: &Path) -> PathBuf {
    let mut v: Value = serde_json::from_str(&fs::read_to_string(config(base)).unwrap()).unwrap();
    v["alpha"] = alpha.into();
    let p = dir.join(format!("alpha_{alpha}.json"));
    fs::write(&p, v.to_string()).unwrap();
    p
}

#[test]
fn constants_six_closed_form_and_quadrature_agree() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["constants"], &config("n6.json"), dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let m = check_manifest(dir.path(), "constants_manifest.json");
    assert_eq!(m["config"]["mu"].as_f64().unwrap(), 0.01);
    let rows = csv_rows(&dir.path().join("constants.csv"));
    let get = |name: &str| rows.iter().find(|r| r[0] == name).unwrap().clone();
    let k = get("K_n^-n");
    assert!(k[4].parse::<f64>().unwrap() < 1e-12);
    assert!(get("kappa")[3].parse::<f64>().unwrap() > 0.0);
    assert!(get("kappa")[6].is_empty());
    assert!(get("t0")[4].parse::<f64>().unwrap() < 1e-12);
}

#[test]
fn constants_flag_alpha_above_critical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with_alpha("n6.json", 1.5, dir.path());
    let o = run(&["constants"], &cfg, dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&dir.path().join("constants.csv"));
    let kappa = rows.iter().find(|r| r[0] == "kappa").unwrap();
    assert!(kappa[3].parse::<f64>().unwrap() < 0.0);
    assert!(!kappa[6].is_empty());
    let m = check_manifest(dir.path(), "constants_manifest.json");
    assert_eq!(m["constants"]["kappa_warning"], Value::Bool(true));
}

#[test]
fn malformed_and_unknown_configs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let broken = dir.path().join("broken.json");
    fs::write(&broken, "{\"n\": 7, \"tau\": 0.1").unwrap();
    let o = run(&["constants"], &broken, dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("config error"));
    let unknown = dir.path().join("unknown.json");
    fs::write(&unknown, r#"{"n": 7, "tau": 0.1, "f0": 35, "h0": 1, "rho0": 2.2e-12, "colour": 3}"#).unwrap();
    let o = run(&["ground-state"], &unknown, dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("colour"));
}

#[test]
fn ground_state_and_profile() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["ground-state"], &config("n7.json"), dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    check_manifest(dir.path(), "ground_state_manifest.json");
    let gs: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("ground_state.json")).unwrap()).unwrap();
    assert!(gs["stability_margin"].as_f64().unwrap() > 0.0);
    assert!(gs["profile_min"].as_f64().unwrap() > gs["eps0"].as_f64().unwrap());
    assert_eq!(csv_rows(&dir.path().join("background_profile.csv")).len(), 201);
}

#[test]
fn green_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["green-check"], &config("n7.json"), dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let m = check_manifest(dir.path(), "green_check_manifest.json");
    assert!(m["constants"]["max_rel_err"].as_f64().unwrap() < 0.02);
}

#[test]
fn reduce_writes_lambda_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["reduce", "--t", "1.0", "--p", "0.5", "--dump-field"], &config("n7.json"), dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let m = check_manifest(dir.path(), "reduce_manifest.json");
    assert!(m["constants"]["outer_contraction"].as_f64().unwrap() < 0.5);
    assert_eq!(m["constants"]["blowup_certificate"], Value::Bool(true));
    let rows = csv_rows(&dir.path().join("lambda.csv"));
    assert_eq!(rows.len(), 8);
    assert!(rows[0][1].parse::<f64>().unwrap() != 0.0);
}

#[test]
fn reduce_rejects_t_outside_the_box() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["reduce", "--t", "20"], &config("n7.json"), dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["reduce", "--p", "0.9,0.9"], &config("n7.json"), dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn large_alpha_escapes_the_admissible_set() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with_alpha("n7.json", 3.0, dir.path());
    let o = run(&["reduce", "--p", "0.5"], &cfg, dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("F_k escape"), "{}", stderr(&o));
}

#[test]
fn single_scale_sweep_warns_without_orders() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["sweep", "--mu-list", "1e-2", "--p", "0.5"], &config("n7.json"), dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("no fitted orders"));
    check_manifest(dir.path(), "sweep_manifest.json");
    let rows = csv_rows(&dir.path().join("sweep.csv"));
    assert!(!rows.is_empty() && rows.iter().all(|r| r[7].is_empty()));
}

#[test]
fn sweep_is_deterministic_across_worker_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["sweep", "--mu-list", "1e-2,5e-3,2.5e-3", "--p", "0.5"];
    let oa = run(&[&args[..], &["--workers", "3"]].concat(), &config("n7.json"), a.path());
    let ob = run(&[&args[..], &["--workers", "1"]].concat(), &config("n7.json"), b.path());
    assert!(oa.status.success(), "{}", stderr(&oa));
    assert!(ob.status.success(), "{}", stderr(&ob));
    let ca = fs::read(a.path().join("sweep.csv")).unwrap();
    assert_eq!(ca, fs::read(b.path().join("sweep.csv")).unwrap());
    let rows = csv_rows(&a.path().join("sweep.csv"));
    assert!(rows.iter().filter(|r| r[0] == "lambda_0").all(|r| r[7].parse::<f64>().unwrap() > 0.0));
}

#[test]
fn sweep_with_zero_rows() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["sweep", "--mu-list", "1e-2", "--find-zero"], &config("n7_decoupled.json"), dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&dir.path().join("sweep.csv"));
    let z = rows.iter().find(|r| r[0] == "zero_t").expect("zero row");
    let t: f64 = z[5].parse().unwrap();
    assert!(t > 0.1 && t < 10.0);
}

#[test]
fn zero_find_t_only() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["zero-find", "--t-only"], &config("n7_decoupled.json"), dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    check_manifest(dir.path(), "zero_find_manifest.json");
    let z: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("zero.json")).unwrap()).unwrap();
    assert_eq!(z["zero"]["certificate"], Value::Bool(true));
    assert!(z["zero"]["residual"].as_f64().unwrap() < 1e-3 * z["zero"]["seed_residual"].as_f64().unwrap());
}
