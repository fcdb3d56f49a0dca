use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str], config: &str, out: &Path, env: &[(&str, &str)]) -> Output {
    let cfg = out.join("config.json");
    std::fs::create_dir_all(out).unwrap();
    std::fs::write(&cfg, config).unwrap();
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_microtube"));
    cmd.args(args).arg("--config").arg(&cfg).arg("--out").arg(out).env_remove("TUBE_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn json(p: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

/// Exit status 0 exactly when every recorded check passed.
fn consistent(dir: &Path, o: &Output) {
    let s = json(dir.join("run_summary.json"));
    let all = s["checks"].as_array().unwrap().iter().all(|c| c["passed"].as_bool().unwrap());
    assert_eq!(code(o) == 0, all && s["error"].is_null(), "{s}");
    assert_eq!(s["exit_code"].as_i64().unwrap(), code(o) as i64);
}

const SMALL: &str = r#"{
    "tube_width": 10,
    "seed": 17,
    "n_chains": 1000,
    "n_steps": 2000,
    "clt": {"short_n": 1000, "seeds": 2},
    "tails": {"samples": 200000},
    "ulam": {"m": 16, "samples_per_cell": 2000, "t_values": [0.02, 0.05]},
    "diagnostics": {"jacobian_points": 100, "pushforward_samples": 20000, "fixed_offsets": [0.3], "corr_chains": 4000, "corr_max_lag": 10}
}"#;

#[test]
fn validate_preset() {
    let d = tempfile::tempdir().unwrap();
    let o = run(&["validate"], r#"{"tube_width": 10, "microstructure": "two-cheeks-three-bottom"}"#, d.path(), &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(d.path().join("validation.json"));
    assert_eq!(v["valid"], true);
    assert!(v["report"]["gamma_margin"].as_f64().unwrap() > 0.0);
    assert!(v["report"]["alpha_margin"].as_f64().unwrap() > 0.0);
    assert_eq!(v["report"]["arcs"].as_array().unwrap().len(), 5);
}

#[test]
fn validate_cusp_exits_2() {
    let d = tempfile::tempdir().unwrap();
    let cfg = r#"{"tube_width": 10, "microstructure": {"parametric": {
        "left_cheek": {"radius": 0.5, "span": 1.5707963267948966},
        "right_cheek": {"radius": 0.5, "span": 1.5707963267948966}}}}"#;
    let o = run(&["validate"], cfg, d.path(), &[]);
    assert_eq!(code(&o), 2);
    let v = json(d.path().join("validation.json"));
    assert_eq!(v["valid"], false);
    assert_eq!(v["error"]["kind"], "CornerAngleViolation");
    consistent(d.path(), &o);
}

#[test]
fn config_errors_exit_1() {
    let d = tempfile::tempdir().unwrap();
    let o = run(&["validate"], r#"{"seed": 1}"#, d.path(), &[]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("tube_width"));
    let o = run(&["validate"], r#"{"tube_width": 10, "ulam": {"cells": 4}}"#, d.path(), &[]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("ulam.cells"));
    let o = run(&["validate"], r#"{"tube_width": 10}"#, d.path(), &[("TUBE_SEED", "minus one")]);
    assert_eq!(code(&o), 1);
}

#[test]
fn simulate_is_deterministic_across_workers() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let oa = run(&["simulate", "--workers", "1"], SMALL, a.path(), &[]);
    let ob = run(&["simulate", "--workers", "3"], SMALL, b.path(), &[]);
    consistent(a.path(), &oa);
    consistent(b.path(), &ob);
    for f in ["partial_sums.bin", "ensemble_summary.json", "collisions.csv"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let s = json(a.path().join("ensemble_summary.json"));
    let hash = s["config_hash"].as_str().unwrap().to_string();
    assert_eq!(json(a.path().join("run_summary.json"))["config_hash"], hash.as_str());
    let csv = std::fs::read_to_string(a.path().join("collisions.csv")).unwrap();
    assert!(csv.starts_with(&format!("# config_hash={hash}\n")));
    assert!(s["visit_stats"]["max_collisions"].as_u64().unwrap() <= 64);
    assert_eq!(s["visit_stats"]["near_grazing"]["other"], 0);
    // [chain][checkpoint], checkpoints {1000, 2000}
    assert_eq!(std::fs::read(a.path().join("partial_sums.bin")).unwrap().len(), 1000 * 2 * 8);
}

#[test]
fn seed_override_changes_hash_and_output() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run(&["simulate"], SMALL, a.path(), &[]);
    run(&["simulate"], SMALL, b.path(), &[("TUBE_SEED", "18")]);
    let (sa, sb) = (json(a.path().join("ensemble_summary.json")), json(b.path().join("ensemble_summary.json")));
    assert_ne!(sa["config_hash"], sb["config_hash"]);
    assert_eq!(sb["seed"], 18);
    assert_ne!(std::fs::read(a.path().join("partial_sums.bin")).unwrap(), std::fs::read(b.path().join("partial_sums.bin")).unwrap());
}

#[test]
fn collision_cap_exits_3() {
    let d = tempfile::tempdir().unwrap();
    let o = run(&["simulate"], r#"{"tube_width": 10, "n_max": 1, "n_chains": 4, "n_steps": 100000}"#, d.path(), &[]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    let s = json(d.path().join("run_summary.json"));
    assert!(s["error"].as_str().unwrap().contains("chain"));
}

#[test]
fn tails_rows_match_exact_law() {
    let d = tempfile::tempdir().unwrap();
    let o = run(&["tails"], SMALL, d.path(), &[]);
    consistent(d.path(), &o);
    let text = std::fs::read_to_string(d.path().join("tails.csv")).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# config_hash="));
    assert_eq!(lines.next().unwrap(), "N,exact,emp_upper,emp_lower,stderr");
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 5);
    for r in rows {
        let exact = 0.5 * (1.0 - r[0] / (r[0] * r[0] + 100.0).sqrt());
        assert!((r[1] - exact).abs() < 1e-12 * exact.max(1e-300) + 1e-15);
        assert!((r[2] - exact).abs() <= 3.0 * (exact * (1.0 - exact) / 200000.0).sqrt() + 1e-12);
    }
}

#[test]
fn spectrum_reports_unit_eigenvalue() {
    let d = tempfile::tempdir().unwrap();
    let o = run(&["spectrum"], SMALL, d.path(), &[]);
    consistent(d.path(), &o);
    let s = json(d.path().join("spectrum.json"));
    let l0 = &s["report"]["lambda0"];
    assert!((l0[0].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert_eq!(s["refined"]["m"], 32);
    let bin = std::fs::read(d.path().join("ulam_t0.bin")).unwrap();
    assert_eq!(bin.len(), 24 + 16 * 16 * 16);
    assert_eq!(u64::from_le_bytes(bin[..8].try_into().unwrap()), 16);
    let curve = std::fs::read_to_string(d.path().join("lambda_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 2 + 3);
}

#[test]
fn diagnostics_report_fd_agreement() {
    let d = tempfile::tempdir().unwrap();
    let o = run(&["diagnostics", "--workers", "2"], SMALL, d.path(), &[]);
    consistent(d.path(), &o);
    let s = json(d.path().join("run_summary.json"));
    let fd = s["checks"].as_array().unwrap().iter().find(|c| c["name"] == "step derivative vs finite differences").unwrap();
    assert_eq!(fd["passed"], true);
    let det = s["checks"].as_array().unwrap().iter().find(|c| c["criterion"] == 10).unwrap();
    assert_eq!(det["passed"], true);
    let j = json(d.path().join("diagnostics.json"));
    assert!(j["jacobians"]["fd_max_rel_error"].as_f64().unwrap() < 1e-4);
    assert!(d.path().join("corr.csv").exists());
}

#[test]
fn clt_reuses_simulation_dump() {
    let d = tempfile::tempdir().unwrap();
    run(&["simulate"], SMALL, d.path(), &[]);
    let o = run(&["clt", "--dump-traces"], SMALL, d.path(), &[]);
    consistent(d.path(), &o);
    let c = json(d.path().join("clt.json"));
    assert_eq!(c["n"], 2000);
    assert_eq!(c["seeds"]["rows"].as_array().unwrap().len(), 4);
    let text = std::fs::read_to_string(d.path().join("clt.csv")).unwrap();
    assert_eq!(text.lines().count(), 2 + 1000);
}

#[test]
fn dump_traces_writes_json_lines() {
    let d = tempfile::tempdir().unwrap();
    let o = run(&["simulate", "--dump-traces"], r#"{"tube_width": 10, "n_chains": 2, "n_steps": 10}"#, d.path(), &[]);
    consistent(d.path(), &o);
    let text = std::fs::read_to_string(d.path().join("traces.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 1000);
    let first: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    for k in ["R", "theta_in", "events", "theta_out"] {
        assert!(first.get(k).is_some(), "{k}");
    }
}
