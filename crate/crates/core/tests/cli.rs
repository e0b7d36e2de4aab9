use std::path::Path;
use std::process::Command;

use fracspike::harness::output::verify_manifest;
use fracspike::spectral::io::decode;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fracspike"))
}

fn write_config(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

const HALF_ORDER: &str = r#"
[params]
s = 0.5
p = 2.0
n = 1

[grid]
L = 128.0
N = 8192
"#;

#[test]
fn ground_state_writes_field_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "gs.toml", HALF_ORDER);
    let out = dir.path().join("out");
    let status = bin().args(["ground-state", "--config"]).arg(&cfg).arg("--out").arg(&out).status().unwrap();
    assert!(status.success());
    let manifest = verify_manifest(&out).unwrap();
    let names: Vec<&str> = manifest.files.iter().map(|f| f.path.as_str()).collect();
    assert_eq!(names, ["config.json", "fields/U.bin", "fields/U.json", "ground_state.json"]);
    let (u, s) = decode(&std::fs::read(out.join("fields/U.bin")).unwrap()).unwrap();
    assert_eq!(s, 0.5);
    assert_eq!(u.grid().size(), 8192);
    let exact = 2.0;
    assert!((u.max() - exact).abs() < 1e-2);
    let diag: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("ground_state.json")).unwrap()).unwrap();
    let keys: Vec<&String> = diag.as_object().unwrap().keys().collect();
    for k in ["decay_slope", "iterations", "mass", "power_integral", "residual_norm"] {
        assert!(keys.iter().any(|x| x.as_str() == k), "{k}");
    }
}

#[test]
fn invalid_order_exits_nonzero_and_names_range() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", &HALF_ORDER.replace("s = 0.5", "s = 1.3"));
    let out = bin().args(["ground-state", "--config"]).arg(&cfg).arg("--out").arg(dir.path().join("o")).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("params.s") && err.contains("(0, 1)"), "{err}");
}

#[test]
fn unknown_key_and_mode_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "typo.toml", &format!("{HALF_ORDER}\n[tolerances]\nfixed_pont = 1e-9\n"));
    let out = bin().args(["ground-state", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fixed_pont"));
    let good = write_config(dir.path(), "ok.toml", HALF_ORDER);
    let out = bin().args(["warp-drive", "--config"]).arg(&good).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

const SCAN: &str = r#"
[params]
s = 0.9
p = 3.0
n = 1

[grid]
L = 128.0
N = 4096

[potential]
kind = "gaussian_well"
A = 1.0
center = [0.0]
width = 2.0

[sweep]
eps = [0.2, 0.1, 0.05, 0.025]
points = [[1.4142135623730951]]

[study]
quantity = "residual"
target = 1.0
tolerance = 0.15
"#;

#[test]
fn residual_scan_and_study_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "scan.toml", SCAN);
    let out = dir.path().join("scan");
    let status = bin().args(["residual-scan", "--config"]).arg(&cfg).arg("--out").arg(&out).status().unwrap();
    assert!(status.success());
    verify_manifest(&out).unwrap();
    let csv = std::fs::read_to_string(out.join("residual_scan.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("eps,xi_1,residual,I1,I2,tangent_gap"));
    assert_eq!(lines.count(), 4);

    let out = dir.path().join("study");
    let o = bin().args(["scaling-study", "--config"]).arg(&cfg).arg("--out").arg(&out).arg("--seed").arg("5").output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let fits: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("scaling_study.json")).unwrap()).unwrap();
    assert_eq!(fits[0]["pass"], true);
    let manifest = verify_manifest(&out).unwrap();
    assert_eq!(manifest.seed, 5);
}

#[test]
fn failing_slope_verdict_sets_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "wrong.toml", &SCAN.replace("target = 1.0", "target = 3.0"));
    let o = bin().args(["scaling-study", "--config"]).arg(&cfg).arg("--out").arg(dir.path().join("o")).output().unwrap();
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}
