use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use paraxial::commands::{analyze_noise, default_max_lag};
use paraxial::formats::{read_field, read_path};
use paraxial_core::homog::ENTRY_NAMES;
use paraxial_core::noise::{OuPath, StreamId};
use paraxial_core::scales::ModelParams;
use serde_json::Value;

struct Run {
    code: i32,
    status: Value,
    stderr: String,
    out: PathBuf,
}

impl Run {
    fn json(&self, name: &str) -> Value {
        serde_json::from_str(&fs::read_to_string(self.out.join(name)).unwrap()).unwrap()
    }

    fn bytes(&self, name: &str) -> Vec<u8> {
        fs::read(self.out.join(name)).unwrap()
    }

    fn check(&self, name: &str) -> Value {
        let manifest = self.json("manifest.json");
        manifest["checks"].as_array().unwrap().iter().find(|c| c["name"] == name).cloned().unwrap_or_else(|| {
            panic!("no check {name} in {manifest}");
        })
    }
}

fn paraxial(dir: &Path, config: Option<&str>, args: &[&str]) -> Run {
    let out = dir.join(format!("out{}", fs::read_dir(dir).unwrap().count()));
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_paraxial"));
    cmd.args(args).arg("--out").arg(&out);
    if let Some(text) = config {
        let path = out.with_extension("cfg");
        fs::write(&path, text).unwrap();
        cmd.arg("--config").arg(path);
    }
    let o = cmd.output().unwrap();
    let stdout = String::from_utf8(o.stdout).unwrap();
    let status = serde_json::from_str(stdout.trim()).unwrap_or_else(|e| panic!("stdout {stdout:?}: {e}"));
    Run { code: o.status.code().unwrap(), status, stderr: String::from_utf8(o.stderr).unwrap(), out }
}

#[test]
fn noise_csv_is_reproducible_and_lag_zero_matches() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[experiment]\nnoise_steps = 200000\n";
    let a = paraxial(dir.path(), Some(cfg), &["validate-noise", "--seed", "42"]);
    let b = paraxial(dir.path(), Some(cfg), &["validate-noise", "--seed", "42"]);
    assert_eq!(a.code, 0, "{}", a.stderr);
    assert_eq!(a.bytes("noise_autocovariance.csv"), b.bytes("noise_autocovariance.csv"));

    let text = String::from_utf8(a.bytes("noise_autocovariance.csv")).unwrap();
    let row: Vec<f64> = text.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(row[0], 0.0);
    assert_eq!(row[3], 0.5);
    assert!((row[2] - 0.5).abs() <= 3.0 * row[4], "lag 0 estimate {} with SE {}", row[2], row[4]);
    let m = a.json("manifest.json");
    assert_eq!(m["seeds"]["master_seed"], 42);
    assert!(m["params"]["eps"].is_number() && m["version"].is_string() && m["tolerances"].is_object());
}

#[test]
fn corrupted_eps_shows_in_decay_length() {
    let dir = tempfile::tempdir().unwrap();
    // the medium is generated with eps = 0.1 while the nominal value is 0.05
    let corrupted = "[model]\neps = 0.1\n[experiment]\nnoise_steps = 400000\nnoise_dz = 0.001\ndump_noise = true\n";
    let run = paraxial(dir.path(), Some(corrupted), &["validate-noise", "--seed", "5"]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    let rec = read_path(&mut run.bytes("noise_path.oup").as_slice()).unwrap();
    let path = OuPath { z_step: rec.z_step, values: rec.values, w_increments: rec.w_increments, seed: StreamId::new(5, 0) };

    let nominal = ModelParams::new(1.0, 1.0, 0.05, 1.0, 0.05, 1.0).unwrap();
    let a = analyze_noise(&path, &nominal, default_max_lag(&nominal, path.z_step) * 2);
    assert!(a.max_abs_z > 3.0, "nominal eps not rejected: {}", a.max_abs_z);
    let ratio = a.fitted_correlation_z / a.correlation_z;
    assert!((ratio - 4.0).abs() < 0.6, "fitted length ratio {ratio}");

    let actual = ModelParams::new(1.0, 1.0, 0.1, 1.0, 0.05, 1.0).unwrap();
    let b = analyze_noise(&path, &actual, default_max_lag(&actual, path.z_step));
    assert!(b.max_abs_z <= 3.0);
}

#[test]
fn covariance_report_and_refusal() {
    let dir = tempfile::tempdir().unwrap();
    let ok = paraxial(dir.path(), None, &["verify-covariance"]);
    assert_eq!(ok.code, 0, "{}", ok.stderr);
    assert_eq!(ok.status["status"], "PASS");
    let report = ok.json("covariance_report.json");
    assert_eq!(report["status"], "PASS");
    assert!(ENTRY_NAMES.contains(&report["worst_entry"].as_str().unwrap()));
    assert_eq!(report["grid"]["n_tuples"], 200);
    assert!(report["max_entry_error"][report["worst_entry"].as_str().unwrap()].as_f64().unwrap() <= 1e-10);

    let refused = paraxial(dir.path(), None, &["verify-covariance", "--delta", "0"]);
    assert_eq!(refused.code, 2);
    assert_eq!(refused.status["status"], "ERROR");
    let msg = refused.status["error"].as_str().unwrap();
    assert!(msg.contains("no integrable nontrivial solution"), "{msg}");
    assert!(refused.stderr.contains("purely imaginary eigenvalues"));
}

#[test]
fn spde_without_medium_keeps_mode_moduli() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[model]\nbeta = 0\n[grid]\nn = 32\n[run]\nz_end = 0.5\ndz = 0.005\nn_paths = 8\n[experiment]\ndump_paths = 3\n";
    let run = paraxial(dir.path(), Some(cfg), &["run-spde", "--seed", "1", "--oracle-check"]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert!(run.check("per_mode_modulus_law")["value"].as_f64().unwrap() <= 1e-12);
    assert!(run.check("closed_form_oracle")["value"].as_f64().unwrap() <= 1e-10);
    let field = read_field(&mut run.bytes("path0002_z000.fld").as_slice(), None).unwrap();
    assert_eq!(field.z, 0.5);
    assert_eq!(field.field.grid().n(), 32);
}

#[test]
fn spde_oracle_check_with_medium() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[grid]\nn = 32\n[run]\nz_end = 1\ndz = 0.001\nsnapshots = 0.25, 0.5\nn_paths = 16\n";
    let run = paraxial(dir.path(), Some(cfg), &["run-spde", "--seed", "9", "--oracle-check"]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert!(run.check("closed_form_oracle")["value"].as_f64().unwrap() <= 1e-10);
    assert!(run.check("pathwise_norm_law")["value"].as_f64().unwrap() <= 1e-10);
    let m = run.json("manifest.json");
    assert_eq!(m["snapshot_zs"].as_array().unwrap().len(), 3);
    assert!(m["coefficients"]["g"].as_f64().unwrap() > 0.0);
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[grid]\nn = 16\n[run]\nz_end = 0.2\ndz = 0.01\nn_paths = 37\n";
    let a = paraxial(dir.path(), Some(cfg), &["run-spde", "--seed", "3", "--workers", "1"]);
    let b = paraxial(dir.path(), Some(cfg), &["run-spde", "--seed", "3", "--workers", "3"]);
    assert_eq!(a.bytes("mean_z000.fld"), b.bytes("mean_z000.fld"));
    assert_eq!(a.bytes("spde_snapshots.csv"), b.bytes("spde_snapshots.csv"));
}

#[test]
fn full_model_repeats_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[model]\neps = 0.2\n[grid]\nn = 16\n[run]\nz_end = 0.2\nsnapshots = 0.1\nn_paths = 6\n[experiment]\ndump_paths = 2\n";
    let a = paraxial(dir.path(), Some(cfg), &["run-full", "--seed", "77", "--oracle-check"]);
    let b = paraxial(dir.path(), Some(cfg), &["run-full", "--seed", "77", "--workers", "2"]);
    assert_eq!(a.code, 0, "{}", a.stderr);
    for name in ["mean_z000.fld", "mean_z001.fld", "path0001_z001.fld", "full_snapshots.csv"] {
        assert_eq!(a.bytes(name), b.bytes(name), "{name}");
    }
    assert!(a.check("beta0_regularized_oracle")["value"].as_f64().unwrap() <= 1e-10);
    let m = a.json("manifest.json");
    assert!(m["max_step"].as_f64().unwrap() > 0.0);
    assert_eq!(m["steps_per_gap"].as_array().unwrap().len(), 2);
}

#[test]
fn narrow_grid_trips_mode_growth_check() {
    let dir = tempfile::tempdir().unwrap();
    // the corner modes of this grid are evanescent at eps = 0.2
    let cfg = "[model]\neps = 0.2\n[grid]\nextent = 8\n[run]\nz_end = 0.05\nn_paths = 2\n";
    let run = paraxial(dir.path(), Some(cfg), &["run-full", "--seed", "5"]);
    assert_eq!(run.code, 1, "{}", run.stderr);
    assert_eq!(run.status["failures"][0]["name"], "mode_growth");
    assert!(run.json("manifest.json")["max_growth_exponent"].as_f64().unwrap() > 1.0);

    let wide = paraxial(dir.path(), Some("[model]\neps = 0.2\n[run]\nz_end = 0.05\nn_paths = 2\n"), &["run-full", "--seed", "5"]);
    assert_eq!(wide.code, 0, "{}", wide.stderr);
}

#[test]
fn full_model_requires_regularization() {
    let dir = tempfile::tempdir().unwrap();
    let run = paraxial(dir.path(), None, &["run-full", "--seed", "1", "--delta", "0"]);
    assert_eq!(run.code, 2);
    assert!(run.status["error"].as_str().unwrap().contains("delta = 0"));
}

#[test]
fn exact_decay_fit_recovers_rate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[model]\ndelta = 0\nbeta = 0.5\nfresnel = 10\n[run]\nz_end = 40\nsnapshots = 5, 10, 15, 20, 25, 30, 35\n[experiment]\ndecay_source = exact\n";
    let run = paraxial(dir.path(), Some(cfg), &["decay-fit"]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    let r = run.json("decay_report.json");
    assert!(r["relative_error"].as_f64().unwrap() <= 1e-12);
    assert!((r["lambda_theory"].as_f64().unwrap() - 0.025).abs() <= 1e-15);
}

#[test]
fn converge_without_medium_matches_regularized_propagation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[model]\nbeta = 0\n[grid]\nn = 16\n[run]\nz_end = 0.1\nn_paths = 4\n";
    let run = paraxial(dir.path(), Some(cfg), &["converge", "--seed", "2", "--eps-list", "0.2,0.1"]);
    let text = String::from_utf8(run.bytes("convergence_shared.csv")).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "beta0_regularized_error").unwrap();
    let rows: Vec<Vec<f64>> =
        text.lines().skip(1).map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 2);
    for r in &rows {
        assert!(r[col] <= 1e-10, "regularized error {}", r[col]);
    }
    assert!(run.check("beta0_regularized_shared")["pass"].as_bool().unwrap());
}

#[test]
fn expand_mu_second_term_is_half_at_mu_one() {
    let dir = tempfile::tempdir().unwrap();
    let run = paraxial(dir.path(), Some("[model]\nk = 1\nl_c = 1\n"), &["expand-mu"]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    let r = run.json("mu_expansion_report.json");
    assert_eq!(r["config_mu"], 1.0);
    assert_eq!(r["config_second_term_fraction"], 0.5);
}

#[test]
fn missing_seed_and_bad_config_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    let run = paraxial(dir.path(), None, &["run-spde"]);
    assert_eq!(run.code, 2);
    assert!(run.status["error"].as_str().unwrap().contains("master_seed"));

    let run = paraxial(dir.path(), Some("[grid]\nn = 64\nn = 32\n"), &["expand-mu"]);
    assert_eq!(run.code, 2);
    assert!(run.stderr.contains("line 3"), "{}", run.stderr);
}

#[test]
fn failed_checks_exit_one_with_failure_list() {
    let dir = tempfile::tempdir().unwrap();
    // too few paths for a 5% decay estimate
    let cfg = "[run]\nz_end = 1\nsnapshots = 0.2, 0.4, 0.6, 0.8\nn_paths = 50\n[experiment]\ndecay_tolerance = 1e-6\n";
    let run = paraxial(dir.path(), Some(cfg), &["decay-fit", "--seed", "3"]);
    assert_eq!(run.code, 1);
    assert_eq!(run.status["status"], "FAIL");
    assert_eq!(run.status["failures"][0]["name"], "decay_rate_relative_error");
    assert_eq!(run.json("manifest.json")["status"], "FAIL");
}
