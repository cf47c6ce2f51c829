use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn afree(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_afree")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn write_config(dir: &Path, body: Value) -> std::path::PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&body).unwrap()).unwrap();
    path
}

#[test]
fn maximal_writes_weak_type_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m");
    let o = afree(&["maximal", "--source", "two-plateau", "--grid", "2,16", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("weak_type.csv")).unwrap();
    assert!(csv.starts_with("lambda,measure_Mu_set,integral_half_level,ratio"));
    assert!(out.join("maximal.bin").exists());
}

#[test]
fn zero_field_is_a_trivial_tp_pass() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("tp");
    let o = afree(&["verify-tp", "--source", "zero", "--grid", "2,16", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_eq!(read_json(&out.join("tp.json"))["pass"], Value::Bool(true));
}

#[test]
fn minimize_then_compare() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("min");
    let o = afree(&["minimize", "--integrand", "heterogeneous:4", "--grid", "2,16", "--out", m.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let run = read_json(&m.join("minimiser.json"));
    assert_eq!(run["converged"], Value::Bool(true));
    let c = dir.path().join("cmp");
    let field = m.join("minimiser.bin");
    let o = afree(&[
        "compare",
        "--integrand",
        "heterogeneous:4",
        "--field",
        field.to_str().unwrap(),
        "--out",
        c.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(fs::read_to_string(c.join("compare.csv")).unwrap().lines().count() > 1);
}

#[test]
fn hole_fill_with_fixed_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("h");
    let o = afree(&[
        "hole-fill", "--source", "two-plateau", "--grid", "2,16", "--p", "2", "--C", "2", "--R", "2", "--lambda0", "0.5",
        "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let rep = read_json(&out.join("holefill.json"));
    // S = max{(2C)^{1/(p-1)}, R} = 4, decay = 2C/(2C+1) = 0.8
    assert!((rep["report"]["S"].as_f64().unwrap() - 4.0).abs() < 1e-12);
    assert!((rep["report"]["decay"].as_f64().unwrap() - 0.8).abs() < 1e-12);
    assert!(!out.join("fit.csv").exists());
}

#[test]
fn thm1_run_and_plotdata() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        serde_json::json!({
            "pipeline": "thm1",
            "operator": "div2@box",
            "integrand": "power:2",
            "grid": { "dim": 2, "resolution": 32 },
            "seed": 7,
            "output_dir": "bundle"
        }),
    );
    let o = afree(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let bundle = dir.path().join("bundle");
    let summary = read_json(&bundle.join("summary.json"));
    assert_eq!(summary["pass"], Value::Bool(true));
    assert!(summary["eps0"].as_f64().unwrap() > 0.0);

    let plots = dir.path().join("plots");
    let o = afree(&["emit-plotdata", "--bundle", bundle.to_str().unwrap(), "--out", plots.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["lambda_cfit.dat", "shells.dat", "higher_norm.dat"] {
        let text = fs::read_to_string(plots.join(name)).unwrap();
        assert!(text.starts_with('#'), "{name} lacks a header");
    }
}

#[test]
fn runs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for tag in ["a", "b"] {
        let cfg = write_config(
            dir.path(),
            serde_json::json!({
                "pipeline": "thm1",
                "integrand": "heterogeneous:4",
                "grid": { "dim": 2, "resolution": 16 },
                "seed": 3,
                "output_dir": tag
            }),
        );
        let o = afree(&["run", "--config", cfg.to_str().unwrap()]);
        assert!(code(&o) <= 1);
        let b = dir.path().join(tag);
        outputs.push((
            fs::read(b.join("compare.csv")).unwrap(),
            fs::read(b.join("holefill.json")).unwrap(),
            fs::read(b.join("minimiser.bin")).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(
        dir.path(),
        serde_json::json!({ "pipeline": "thm1", "grid": { "dim": 2, "resolution": 3 }, "output_dir": "x" }),
    );
    assert_eq!(code(&afree(&["run", "--config", bad.to_str().unwrap()])), 2);
    let unknown = write_config(
        dir.path(),
        serde_json::json!({ "pipeline": "thm1", "grid": { "dim": 2, "resolution": 16 }, "output_dir": "x", "typo": 1 }),
    );
    assert_eq!(code(&afree(&["run", "--config", unknown.to_str().unwrap()])), 2);
    let missing = dir.path().join("missing.json");
    assert_eq!(code(&afree(&["run", "--config", missing.to_str().unwrap()])), 2);
    assert_eq!(code(&afree(&["emit-plotdata", "--bundle", dir.path().join("none").to_str().unwrap()])), 2);
}

#[test]
fn short_flags_are_rejected() {
    assert_eq!(code(&afree(&["maximal", "-o", "x"])), 2);
}

#[test]
fn domain_run_then_extend() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        serde_json::json!({
            "pipeline": "domain",
            "integrand": "power:2",
            "grid": { "dim": 2, "resolution": 32 },
            "output_dir": "dom"
        }),
    );
    let o = afree(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let bundle = dir.path().join("dom");
    assert!(bundle.join("c3_map.csv").exists());

    let cube = bundle.join("minimiser.bin");
    let mask = bundle.join("domain.mask.json");
    let out = dir.path().join("ext");
    let o = afree(&[
        "extend",
        "--field",
        cube.to_str().unwrap(),
        "--domain",
        mask.to_str().unwrap(),
        "--mode",
        "reflect",
        "--verify",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let rep = read_json(&out.join("extension.json"));
    assert!(rep["residual"].as_f64().unwrap() <= 1e-8);
    assert_eq!(rep["pointwise_bound_ok"], Value::Bool(true));

    let plots = dir.path().join("plots");
    let o = afree(&["emit-plotdata", "--bundle", bundle.to_str().unwrap(), "--out", plots.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(plots.join("c3_map.csv").exists());

    let o = afree(&["extend", "--field", cube.to_str().unwrap(), "--mode", "sideways", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}
