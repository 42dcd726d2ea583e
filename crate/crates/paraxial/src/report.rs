//! Checks, run outcomes and the files each command leaves behind.

use std::fs;
use std::path::{Path, PathBuf};

use paraxial_core::grid::CARRIER_CONVENTION;
use paraxial_core::scales::{regime_report, ModelParams, RegimeThresholds};
use serde_json::{json, Map, Value};

use crate::plot::LinePlot;

/// One embedded verification with its measured value and bound.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub value: f64,
    /// Human-readable bound, e.g. `<= 1e-10` or `in [3.5, 4.5]`.
    pub bound: String,
}

impl Check {
    pub fn at_most(name: &str, value: f64, tolerance: f64) -> Self {
        Check { name: name.to_string(), pass: value <= tolerance, value, bound: format!("<= {tolerance:e}") }
    }

    pub fn within(name: &str, value: f64, lo: f64, hi: f64) -> Self {
        Check { name: name.to_string(), pass: (lo..=hi).contains(&value), value, bound: format!("in [{lo}, {hi}]") }
    }

    pub fn above(name: &str, value: f64, floor: f64) -> Self {
        Check { name: name.to_string(), pass: value > floor, value, bound: format!("> {floor:e}") }
    }

    /// A yes/no property; `value` carries a supporting number.
    pub fn holds(name: &str, pass: bool, value: f64) -> Self {
        Check { name: name.to_string(), pass, value, bound: "holds".to_string() }
    }

    pub fn to_json(&self) -> Value {
        json!({ "name": self.name, "pass": self.pass, "value": self.value, "bound": self.bound })
    }
}

/// Result of one command: its checks, command-specific report and files written.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub command: &'static str,
    pub checks: Vec<Check>,
    pub report: Value,
    pub outputs: Vec<PathBuf>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// The machine-readable status line printed on stdout.
    pub fn status_json(&self) -> Value {
        json!({
            "status": if self.passed() { "PASS" } else { "FAIL" },
            "command": self.command,
            "failures": self.failures().iter().map(|c| c.to_json()).collect::<Vec<_>>(),
        })
    }
}

/// Writes into one output directory and remembers what it wrote.
#[derive(Debug)]
pub struct Artifacts {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

impl Artifacts {
    pub fn create(dir: &Path) -> std::io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Artifacts { dir: dir.to_path_buf(), written: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn bytes(&mut self, name: &str, data: &[u8]) -> std::io::Result<PathBuf> {
        let p = self.path(name);
        fs::write(&p, data)?;
        self.written.push(p.clone());
        Ok(p)
    }

    pub fn json(&mut self, name: &str, value: &Value) -> std::io::Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
        text.push('\n');
        self.bytes(name, text.as_bytes())
    }

    pub fn svg(&mut self, name: &str, plot: &LinePlot) -> std::io::Result<PathBuf> {
        self.bytes(name, plot.to_svg().as_bytes())
    }

    /// A CSV table with a header row; numbers are written in shortest
    /// round-trip form.
    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<f64>]) -> Result<PathBuf, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for row in rows {
            w.write_record(row.iter().map(|x| fmt_f64(*x)))?;
        }
        let data = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
        Ok(self.bytes(name, &data)?)
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    pub fn into_written(self) -> Vec<PathBuf> {
        self.written
    }
}

pub fn params_json(p: &ModelParams) -> Value {
    json!({
        "k": p.k(),
        "l_c": p.l_c(),
        "eps": p.eps(),
        "beta": p.beta(),
        "delta": p.delta(),
        "fresnel": p.fresnel(),
        "mu": p.mu(),
        "diffraction": p.diffraction(),
        "correlation_z": p.correlation_z(),
    })
}

pub fn regime_json(p: &ModelParams, t: &RegimeThresholds) -> Value {
    let r = regime_report(p, t);
    json!({
        "paraxial_ok": r.paraxial_ok,
        "fresnel_ok": r.fresnel_ok,
        "frequency_regime": r.regime.as_str(),
        "warnings": r.has_warnings(),
        "thresholds": {
            "eps_max": t.eps_max,
            "fresnel_min": t.fresnel_min,
            "fresnel_max": t.fresnel_max,
            "high_frequency_mu": t.high_frequency_mu,
            "long_wave_mu": t.long_wave_mu,
        },
    })
}

/// Everything needed to repeat a run: configuration text, derived
/// parameters, seeds, versions, tolerances and the check results.
pub struct ManifestInput<'a> {
    pub command: &'static str,
    pub config_text: String,
    pub params: Option<&'a ModelParams>,
    pub thresholds: &'a RegimeThresholds,
    pub seeds: Value,
    pub workers: usize,
    pub tolerances: Value,
    pub extra: Value,
}

pub fn manifest(input: ManifestInput<'_>, checks: &[Check], outputs: &[PathBuf]) -> Value {
    let mut m = Map::new();
    m.insert("tool".into(), json!("paraxial"));
    m.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
    m.insert("core_version".into(), json!(paraxial_core::VERSION));
    m.insert("command".into(), json!(input.command));
    m.insert("config".into(), json!(input.config_text));
    if let Some(p) = input.params {
        m.insert("params".into(), params_json(p));
        m.insert("regime".into(), regime_json(p, input.thresholds));
    }
    m.insert("carrier_convention".into(), json!(CARRIER_CONVENTION));
    m.insert("rng".into(), json!("ChaCha12, one stream per (master_seed, path_index)"));
    m.insert("seeds".into(), input.seeds);
    m.insert("workers".into(), json!(input.workers));
    m.insert("tolerances".into(), input.tolerances);
    m.insert("checks".into(), Value::Array(checks.iter().map(Check::to_json).collect()));
    m.insert("status".into(), json!(if checks.iter().all(|c| c.pass) { "PASS" } else { "FAIL" }));
    let names: Vec<String> = outputs
        .iter()
        .map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default())
        .collect();
    m.insert("outputs".into(), json!(names));
    if let Value::Object(extra) = input.extra {
        m.extend(extra);
    }
    Value::Object(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn check_constructors() {
        assert!(Check::at_most("a", 1e-11, 1e-10).pass);
        assert!(!Check::at_most("a", f64::NAN, 1e-10).pass);
        assert!(Check::within("r", 4.0, 3.5, 4.5).pass);
        assert!(!Check::within("r", 4.6, 3.5, 4.5).pass);
        assert!(!Check::above("m", 0.0, 0.0).pass);
    }

    #[test]
    fn status_lists_only_failures() {
        let o = Outcome {
            command: "x",
            checks: vec![Check::at_most("ok", 0.0, 1.0), Check::at_most("bad", 2.0, 1.0)],
            report: Value::Null,
            outputs: Vec::new(),
        };
        let s = o.status_json();
        assert_eq!(s["status"], "FAIL");
        assert_eq!(s["failures"].as_array().unwrap().len(), 1);
        assert_eq!(s["failures"][0]["name"], "bad");
    }

    #[test]
    fn csv_round_trips_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = Artifacts::create(dir.path()).unwrap();
        let x = 0.1 + 0.2;
        let p = a.csv("t.csv", &["a", "b"], &[vec![x, 1e-300]]).unwrap();
        let text = fs::read_to_string(p).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("a,b"));
        let row: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(row[0].to_bits(), x.to_bits());
        assert_eq!(row[1], 1e-300);
    }
}
