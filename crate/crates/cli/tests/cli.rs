use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

fn blowup(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blowup"))
        .args(args)
        .env_remove("BLOWUP_LAB_OUT")
        .output()
        .unwrap()
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn check_manifest(dir: &Path) -> Value {
    let manifest = json(&dir.join("manifest.json"));
    let listed: Vec<String> = manifest["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| {
            let name = f["path"].as_str().unwrap();
            let bytes = fs::read(dir.join(name)).unwrap();
            let hex: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
            assert_eq!(f["sha256"].as_str().unwrap(), hex, "{name}");
            name.to_string()
        })
        .collect();
    for entry in fs::read_dir(dir).unwrap() {
        let name = entry.unwrap().file_name().into_string().unwrap();
        if name != "manifest.json" {
            assert!(listed.contains(&name), "{name} missing from the manifest");
        }
    }
    manifest
}

#[test]
fn ode_golden_config() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("ode");
    let cfg = configs().join("ode_golden.toml");
    let o = blowup(&["ode", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = check_manifest(&out);
    assert_eq!(manifest["status"], "ok");
    let t = manifest["summary"]["T_est"].as_f64().unwrap();
    assert!((t - 1.0).abs() <= 1e-8, "{t}");
    let csv = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert!(csv.starts_with("t,v,v_prime,"));
}

#[test]
fn cfl_above_one_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("w");
    let o = blowup(&["wave", "--out", s(&out), "--override", "wave.cfl=1.5"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("wave.cfl"), "{err}");
    assert!(!out.exists());
}

#[test]
fn bad_config_file_and_usage_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    fs::write(&cfg, "[model]\np = 3.0\nfoo = 1\n").unwrap();
    let o = blowup(&["ode", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("foo"));
    assert_eq!(blowup(&["nonsense"]).status.code(), Some(1));
    assert_eq!(blowup(&["ode", "--override", "novalue"]).status.code(), Some(1));
}

#[test]
fn numerical_failure_leaves_diagnostics() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sim");
    let o = blowup(&["similarity", "--out", s(&out), "--override", "similarity.s_end=12"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let diag = json(&out.join("diagnostics.json"));
    assert!(diag["error"].as_str().unwrap().contains("s_end"));
    assert_eq!(check_manifest(&out)["status"], "failed");
}

#[test]
fn pipeline_is_deterministic_and_reportable() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("pipeline.toml");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let o = blowup(&["pipeline", "--config", s(&cfg), "--out", s(dir), "--seed", "5"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let manifest = check_manifest(&a);
    assert_eq!(manifest["config"]["seed"], 5);
    for name in ["rate.csv", "functionals.csv", "hardy.csv", "surface.csv", "pointwise.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    assert_eq!(fs::read(a.join("manifest.json")).unwrap(), fs::read(b.join("manifest.json")).unwrap());

    let summary = &manifest["summary"];
    assert!(summary["rate"]["k_hat"].as_f64().unwrap() > 0.0);
    assert!(summary["similarity"]["N_m_margin"].as_f64().unwrap() >= 0.0);
    assert!(summary["similarity"]["Ltilde_m_max_increase"].as_f64().unwrap() <= 0.0);
    assert!(summary["similarity"]["L0_identity_gap"].as_f64().unwrap() <= 1e-12);

    let o = blowup(&["report", s(tmp.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&tmp.path().join("report.json"));
    assert_eq!(report["runs"].as_array().unwrap().len(), 2);
    let cross = report["cross_reference"].as_object().unwrap();
    for key in ["a:k_hat", "a:K_hat", "a:N_m_min", "a:Ltilde_m_max_increase"] {
        assert!(cross.contains_key(key), "{key}");
    }
    let script = fs::read_to_string(tmp.path().join("report.gp")).unwrap();
    assert!(script.contains("a/rate.csv") && script.contains("a/functionals.csv"));
}

#[test]
fn seed_changes_only_the_random_draws() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |seed: &str, dir: &str| {
        let out = tmp.path().join(dir);
        let o = blowup(&["duhamel", "--out", s(&out), "--seed", seed]);
        assert!(o.status.success());
        out
    };
    let (a, b) = (run("1", "a"), run("2", "b"));
    assert_eq!(fs::read(a.join("solution.csv")).unwrap(), fs::read(b.join("solution.csv")).unwrap());
    let err = json(&a.join("duhamel.json"))["rescaling_identity_max_error"].as_f64().unwrap();
    assert!(err <= 1e-10);
}

#[test]
fn report_of_single_run_and_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let o = blowup(&["report", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(1));

    let out = tmp.path().join("ode");
    assert!(blowup(&["ode", "--out", s(&out)]).status.success());
    assert!(blowup(&["report", s(&out)]).status.success());
    let report = json(&out.join("report.json"));
    assert_eq!(report["runs"].as_array().unwrap().len(), 1);
    assert_eq!(report["runs"][0]["experiment"], "ode");

    fs::write(out.join("ode.json"), "{}").unwrap();
    let o = blowup(&["report", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("ode.json"));

    fs::write(out.join("manifest.json"), "not json").unwrap();
    assert_eq!(blowup(&["report", s(&out)]).status.code(), Some(1));
}

#[test]
fn env_var_sets_the_output_root() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_blowup"))
        .args(["ode"])
        .env("BLOWUP_LAB_OUT", tmp.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    check_manifest(&tmp.path().join("ode"));
}

#[test]
fn radial_config_blows_up_at_the_origin() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("r");
    let cfg = configs().join("radial.toml");
    let o = blowup(&["pipeline", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = &check_manifest(&out)["summary"];
    assert_eq!(summary["vertex"]["x0"].as_f64().unwrap(), 0.0);
    assert_eq!(summary["surface"]["lipschitz_ok"], true);
    assert!(summary["similarity"]["N_m_margin"].as_f64().unwrap() >= 0.0);
}
