use assert_cmd::Command;
use std::fs;
use std::path::Path;

fn mbres() -> Command {
    let mut c = Command::cargo_bin("mbres").unwrap();
    c.env("MBRES_THREADS", "2");
    c
}

const SMALL: &str = r#"
[dimensionless]
kappa = 1e-5
alpha_scale = 2e-3
beta_scale = 3e-3
gamma_scale = 1e-4

[ensemble]
n = 12
seed = 5
active = { kind = "box", lo = [3.0, 0.5, 0.5], hi = [9.0, 1.5, 1.5] }
"#;

fn write_config(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("small.toml");
    fs::write(&p, SMALL).unwrap();
    p
}

#[test]
fn verify_integrals_passes() {
    let out = mbres().args(["verify-integrals", "--kappa", "1e-7"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("A1") && text.contains("J2"));
    assert!(!text.contains("FAIL"));
}

#[test]
fn verify_integrals_json() {
    let out = mbres().args(["verify-integrals", "--kappa", "1e-3", "--json"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v.as_array().unwrap().iter().all(|r| r["pass"] == true));
}

#[test]
fn missing_config_is_a_validation_error() {
    let d = tempfile::tempdir().unwrap();
    let out = mbres()
        .args(["spectrum", "--config", "/nonexistent/desk.toml", "--out"])
        .arg(d.path().join("x.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot read"));
    let out = mbres().args(["spectrum", "--out", "x.json"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(mbres().args(["verify-integrals", "--kappa", "1e-3", "--bogus"]).output().unwrap().status.code(), Some(2));
    assert_eq!(mbres().args(["frobnicate"]).output().unwrap().status.code(), Some(2));
}

#[test]
fn bad_config_values_are_validation_errors() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path().join("bad.toml");
    fs::write(&p, SMALL.replace("kappa = 1e-5", "kappa = 3.0")).unwrap();
    let out = mbres().args(["ensemble", "--config"]).arg(&p).arg("--out").arg(d.path().join("e.csv")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn outputs_are_reproducible() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path());
    for name in ["a.json", "b.json"] {
        mbres().args(["spectrum", "--config"]).arg(&cfg).arg("--out").arg(d.path().join(name)).assert().success();
    }
    assert_eq!(fs::read(d.path().join("a.json")).unwrap(), fs::read(d.path().join("b.json")).unwrap());
    for name in ["a.csv", "b.csv"] {
        mbres().args(["ensemble", "--config"]).arg(&cfg).arg("--out").arg(d.path().join(name)).assert().success();
    }
    assert_eq!(fs::read(d.path().join("a.csv")).unwrap(), fs::read(d.path().join("b.csv")).unwrap());
}

#[test]
fn seed_flag_overrides_config() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path());
    let run = |seed: &str, name: &str| {
        mbres()
            .args(["ensemble", "--seed", seed, "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(d.path().join(name))
            .assert()
            .success();
        fs::read_to_string(d.path().join(name)).unwrap()
    };
    let a = run("5", "a.csv");
    let b = run("6", "b.csv");
    assert!(a.starts_with("# mbres ensemble seed=5"));
    assert!(b.starts_with("# mbres ensemble seed=6"));
    assert_ne!(a.lines().nth(2), b.lines().nth(2));
    assert_eq!(a.lines().count(), 2 + 12);
}

#[test]
fn spectrum_report_embeds_config() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path());
    let out = d.path().join("s.json");
    mbres()
        .args(["spectrum", "--method", "both", "--d-variant", "identity", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .assert()
        .success();
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["seed"], 5);
    assert_eq!(v["config"]["ensemble"]["n"], 12);
    assert_eq!(v["result"]["d_variant"], "identity");
    assert_eq!(v["result"]["trivial_roots"], 2);
    assert!(v["result"]["cross_method_discrepancy"].as_f64().unwrap() < 1e-8);
}

#[test]
fn poincare_both_reports_discrepancy() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path());
    let out = d.path().join("p.json");
    mbres()
        .args(["poincare", "--mode", "both", "--eps", "1e-4", "--a0", "1e-4", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .assert()
        .success();
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["result"]["discrepancy"].as_array().unwrap().len(), 2 + 2 * 12);
    assert!(v["result"]["max_discrepancy"].as_f64().unwrap() < 1e-5);
}

#[test]
fn simulate_streams_samples() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path());
    let out = d.path().join("t.csv");
    mbres()
        .args(["simulate", "--periods", "2", "--samples", "8", "--a0", "1e-3", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .assert()
        .success();
    let text = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[1], "tau,a,b,energy,mean_inversion");
    assert_eq!(lines.len(), 2 + 17);
    let first: Vec<f64> = lines[2].split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!(first[1], 1e-3);
    assert!((first[4] + 1.0).abs() < 1e-15);
}

#[test]
fn threshold_scan_writes_every_point() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path());
    let out = d.path().join("scan.csv");
    mbres()
        .args(["threshold-scan", "--pump-min", "0.1", "--pump-max", "100", "--steps", "7", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .assert()
        .success();
    let text = fs::read_to_string(&out).unwrap();
    let mut rows = text.lines().skip(1);
    assert_eq!(rows.next().unwrap(), "a_p,max_abs_mu,verdict,maxwell_component_min");
    assert_eq!(rows.count(), 7);
}

#[test]
fn paper_constants_preset() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("e.json");
    mbres().args(["ensemble", "--paper-constants", "--n", "20", "--out"]).arg(&out).assert().success();
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["result"]["molecules"].as_array().unwrap().len(), 20);
    assert!(v["result"]["rescale_factor"].as_f64().unwrap() > 1e18);
}

#[test]
fn bad_output_extension() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path());
    let out = mbres().args(["ensemble", "--config"]).arg(&cfg).arg("--out").arg(d.path().join("e.txt")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
