use std::path::PathBuf;
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_algebroid-flow")).args(args).output().expect("binary runs")
}

fn run_on(cmd: &str, file: &str, extra: &[&str]) -> Output {
    let path = scenario(file);
    let mut args = vec![cmd, path.to_str().unwrap()];
    args.extend_from_slice(extra);
    run(&args)
}

fn stderr_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stderr).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {}", String::from_utf8_lossy(&out.stderr)))
}

const BUNDLED: [&str; 7] = [
    "free_particle.json",
    "curved_base.json",
    "so3_isotropic.json",
    "so3_rigid_body.json",
    "general.json",
    "perturbed_flat.json",
    "curved_fiber.json",
];

#[test]
fn validate_free_particle() {
    let out = run_on("validate", "free_particle.json", &[]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("scenario,kind,points,"));
    assert!(text.lines().nth(1).unwrap().ends_with(",true"));
}

#[test]
fn bundled_scenarios_validate_and_pass_identities() {
    for name in BUNDLED {
        let out = run_on("validate", name, &["--format", "json"]);
        assert_eq!(out.status.code(), Some(0), "validate {name}");
        let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(v["structure"]["pass"], true, "{name}");

        let out = run_on("curv", name, &[]);
        assert_eq!(out.status.code(), Some(0), "curv {name}: {}", String::from_utf8_lossy(&out.stderr));
        let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(v["identities"]["pass"], true, "{name}");
    }
}

#[test]
fn singular_hessian_is_a_domain_error() {
    let out = run_on("curv", "fixtures/singular_hessian.json", &[]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "singular");
    assert!(out.stdout.is_empty());
}

#[test]
fn degenerate_metric_fails_at_step_zero() {
    let out = run_on("flow", "fixtures/degenerate_metric.json", &[]);
    assert_eq!(out.status.code(), Some(2));
    let e = stderr_json(&out);
    assert_eq!(e["exit_code"], 2);
    assert!(e["message"].as_str().unwrap().contains("step 0"), "{e}");
}

#[test]
fn schema_errors_carry_a_json_pointer() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(
        &path,
        r#"{"algebroid": {"n": 1, "m": 1, "rho": [["1"]], "chart": {"x": [[0, 1]], "y": [[0, 1]]}}, "lagrangian": {}}"#,
    )
    .unwrap();
    let out = run(&["validate", "--scenario", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["path"], "/lagrangian/L");
}

#[test]
fn usage_errors_exit_one() {
    for args in [&["frobnicate"][..], &["validate"], &["flow", "x.json", "--mode", "sideways"]] {
        let out = run(args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert_eq!(stderr_json(&out)["error"], "usage");
    }
    let out = run_on("validate", "free_particle.json", &["--scenario", "other.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(run(&["--help"]).status.success());
}

#[test]
fn tiny_tolerance_breaches_an_invariant() {
    let out = run_on("validate", "general.json", &["--tol", "1e-300"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_json(&out)["error"], "invariant");
}

#[test]
fn rigid_body_flow_has_monotone_f_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        let out = run_on("flow", "so3_rigid_body.json", &["--steps", "5", "--out", d.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let csv_a = std::fs::read(a.join("flow.csv")).unwrap();
    assert_eq!(csv_a, std::fs::read(b.join("flow.csv")).unwrap());

    let mut rd = csv::Reader::from_reader(csv_a.as_slice());
    let header: Vec<String> = rd.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(
        header,
        ["chi", "tau", "F", "W", "E_avg", "S", "sigma", "max_mixed_ricci_residual", "min_eig_g"]
    );
    let f: Vec<f64> = rd.records().map(|r| r.unwrap()[2].parse().unwrap()).collect();
    assert_eq!(f.len(), 6);
    assert!(f.windows(2).all(|w| w[1] >= w[0]), "{f:?}");
    assert!(a.join("snapshot.json").exists());
}

#[test]
fn flat_flow_keeps_f_constant() {
    let out = run_on("flow", "free_particle.json", &["--steps", "10", "--format", "json"]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let rows = v.as_array().unwrap();
    assert_eq!(rows.len(), 11);
    for r in rows {
        assert!((r["F"].as_f64().unwrap() - rows[0]["F"].as_f64().unwrap()).abs() < 1e-12);
    }
}

#[test]
fn el_trajectory_conserves_energy() {
    let out = run_on("el-integrate", "so3_rigid_body.json", &["--steps", "1000"]);
    assert_eq!(out.status.code(), Some(0));
    let mut rd = csv::Reader::from_reader(out.stdout.as_slice());
    let header: Vec<String> = rd.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, ["tau", "x1", "y1", "y2", "y3", "E_L"]);
    let e: Vec<f64> = rd.records().map(|r| r.unwrap()[5].parse().unwrap()).collect();
    assert_eq!(e.len(), 1001);
    assert!(e.iter().all(|v| (v - e[0]).abs() < 1e-9 * e[0].abs()));
}

#[test]
fn curv_writes_dumps_to_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_on("curv", "curved_base.json", &["--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    for f in ["identities.json", "curv.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn thermo_reports_positive_sigma() {
    let out = run_on("thermo", "free_particle.json", &[]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["thermo"]["e_avg"].as_f64().unwrap() - 2.0).abs() < 1e-9);
    assert!(v["thermo"]["sigma"].as_f64().unwrap() >= 0.0);
}
