//! Run configuration files.
//!
//! The format is line oriented: `[section]` headers, `key = value` pairs,
//! `#` comments and blank lines. Numbers are plain decimal text, lists are
//! comma separated. Every key has a default except `run.master_seed`, which
//! ensemble commands require. [`RunConfig::to_text`] writes every field, so
//! parsing its output gives back the same configuration.

use std::collections::HashSet;
use std::fmt::Write as _;

use paraxial_core::fullmodel::{InitialSlope, DEFAULT_C_STAB};
use paraxial_core::scales::{derive_params, ModelParams, PhysicalScales, RegimeThresholds};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{}{message}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
pub struct ConfigError {
    /// 1-based line of the offending text, if the problem is local to one line.
    pub line: Option<usize>,
    pub message: String,
}

fn err<T>(line: usize, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError { line: Some(line), message: message.into() })
}

/// Dimensionless parameters given directly instead of through physical scales.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelSection {
    pub k: f64,
    pub l_c: f64,
    pub eps: f64,
    pub beta: f64,
    pub delta: f64,
    pub fresnel: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { k: 1.0, l_c: 1.0, eps: 0.05, beta: 1.0, delta: 0.05, fresnel: 1.0 / (2.0 * std::f64::consts::PI) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParamSource {
    Scales { scales: PhysicalScales, delta: f64 },
    Model(ModelSection),
}

impl ParamSource {
    pub fn delta(&self) -> f64 {
        match self {
            ParamSource::Scales { delta, .. } => *delta,
            ParamSource::Model(m) => m.delta,
        }
    }
}

/// `L = 400`, `L_x = 20`, `ell = k0 = ell_c = 1`, `sigma = 0.05` and
/// `delta = 0.05`: `ε = 0.05`, `β = 1`, `k = l_c = 1`, `N_F = 1/2π`.
pub fn default_scales() -> PhysicalScales {
    PhysicalScales {
        propagation_length: 400.0,
        transverse_scale: 20.0,
        reference_length: 1.0,
        wavenumber: 1.0,
        correlation_length: 1.0,
        sigma: 0.05,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridConfig {
    pub n: usize,
    pub extent: f64,
    /// `1/e` radius of the Gaussian input beam.
    pub beam_width: f64,
    pub amplitude: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { n: 64, extent: 32.0, beam_width: 1.5, amplitude: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSection {
    pub z_end: f64,
    /// Step of the limiting-equation solver. The full model picks its own.
    pub dz: f64,
    /// Extra snapshot positions before `z_end`, which is always recorded.
    pub snapshots: Vec<f64>,
    pub n_paths: u64,
    pub master_seed: Option<u64>,
    pub c_stab: f64,
    pub initial_slope: InitialSlope,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            z_end: 1.0,
            dz: 1e-3,
            snapshots: Vec::new(),
            n_paths: 100,
            master_seed: None,
            c_stab: DEFAULT_C_STAB,
            initial_slope: InitialSlope::Zero,
        }
    }
}

/// Which seed layouts a convergence study runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedSelection {
    Shared,
    Independent,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecaySource {
    /// Monte-Carlo ensemble of the limiting equation.
    Ensemble,
    /// The closed-form coherent field, for checking the fit itself.
    Exact,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Free-form label copied into manifests.
    pub name: String,
    pub eps_list: Vec<f64>,
    pub seed_mode: SeedSelection,
    pub noise_steps: usize,
    /// OU sampling step; defaults to a tenth of the correlation length `ε² l_c`.
    pub noise_dz: Option<f64>,
    /// Largest autocovariance lag in steps; defaults to five correlation lengths.
    pub max_lag: Option<usize>,
    pub dump_noise: bool,
    pub n_tuples: usize,
    pub tuple_seed: u64,
    pub u_r: f64,
    pub u_i: f64,
    pub decay_source: DecaySource,
    pub decay_tolerance: f64,
    pub mu_list: Vec<f64>,
    /// Number of individual paths whose snapshots are written out.
    pub dump_paths: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "default".to_string(),
            eps_list: vec![0.2, 0.1, 0.05],
            seed_mode: SeedSelection::Shared,
            noise_steps: 1_000_000,
            noise_dz: None,
            max_lag: None,
            dump_noise: false,
            n_tuples: 200,
            tuple_seed: 1,
            u_r: 1.0,
            u_i: 0.5,
            decay_source: DecaySource::Ensemble,
            decay_tolerance: 0.05,
            mu_list: vec![0.2, 0.1, 0.05, 0.025],
            dump_paths: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub params: ParamSource,
    pub regime: RegimeThresholds,
    pub grid: GridConfig,
    pub run: RunSection,
    pub experiment: ExperimentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            params: ParamSource::Scales { scales: default_scales(), delta: 0.05 },
            regime: RegimeThresholds::default(),
            grid: GridConfig::default(),
            run: RunSection::default(),
            experiment: ExperimentConfig::default(),
        }
    }
}

fn parse_f64(line: usize, key: &str, v: &str) -> Result<f64, ConfigError> {
    match v.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => err(line, format!("{key}: expected a finite decimal number, found {v:?}")),
    }
}

fn parse_u64(line: usize, key: &str, v: &str) -> Result<u64, ConfigError> {
    v.parse::<u64>().or_else(|_| err(line, format!("{key}: expected a nonnegative integer, found {v:?}")))
}

fn parse_usize(line: usize, key: &str, v: &str) -> Result<usize, ConfigError> {
    v.parse::<usize>().or_else(|_| err(line, format!("{key}: expected a nonnegative integer, found {v:?}")))
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => err(line, format!("{key}: expected true or false, found {v:?}")),
    }
}

/// Comma-separated decimals; an empty value is the empty list.
pub fn parse_f64_list(v: &str) -> Result<Vec<f64>, String> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|item| {
            let item = item.trim();
            match item.parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(x),
                _ => Err(format!("expected a finite decimal number, found {item:?}")),
            }
        })
        .collect()
}

fn list(line: usize, key: &str, v: &str) -> Result<Vec<f64>, ConfigError> {
    parse_f64_list(v).or_else(|m| err(line, format!("{key}: {m}")))
}

fn fmt_list(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ")
}

fn slope_name(s: InitialSlope) -> &'static str {
    match s {
        InitialSlope::Zero => "zero",
        InitialSlope::Paraxial => "paraxial",
    }
}

impl SeedSelection {
    pub fn as_str(&self) -> &'static str {
        match self {
            SeedSelection::Shared => "shared",
            SeedSelection::Independent => "independent",
            SeedSelection::Both => "both",
        }
    }
}

impl DecaySource {
    pub fn as_str(&self) -> &'static str {
        match self {
            DecaySource::Ensemble => "ensemble",
            DecaySource::Exact => "exact",
        }
    }
}

const SECTIONS: [&str; 6] = ["scales", "model", "regime", "grid", "run", "experiment"];

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut scales = default_scales();
        let mut scales_delta = 0.05;
        let mut model = ModelSection::default();
        let mut source: Option<(&str, usize)> = None;
        let mut section: Option<&str> = None;
        let mut seen_sections: HashSet<&str> = HashSet::new();
        let mut seen_keys: HashSet<(String, String)> = HashSet::new();

        for (index, raw) in text.lines().enumerate() {
            let line = index + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix('[') {
                let Some(name) = rest.strip_suffix(']').map(str::trim) else {
                    return err(line, format!("malformed section header {content:?}"));
                };
                let Some(&name) = SECTIONS.iter().find(|s| **s == name) else {
                    return err(line, format!("unknown section [{name}]; expected one of {}", SECTIONS.join(", ")));
                };
                if !seen_sections.insert(name) {
                    return err(line, format!("section [{name}] appears twice"));
                }
                if name == "scales" || name == "model" {
                    if let Some((other, at)) = source {
                        return err(line, format!("[{name}] conflicts with [{other}] on line {at}; give one of them"));
                    }
                    source = Some((name, line));
                }
                section = Some(name);
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return err(line, format!("expected `key = value`, found {content:?}"));
            };
            let (key, v) = (key.trim(), value.trim());
            let Some(sec) = section else {
                return err(line, format!("key {key:?} appears before any section header"));
            };
            if !seen_keys.insert((sec.to_string(), key.to_string())) {
                return err(line, format!("duplicate key {key:?} in [{sec}]"));
            }
            match (sec, key) {
                ("scales", "L") => scales.propagation_length = parse_f64(line, key, v)?,
                ("scales", "L_x") => scales.transverse_scale = parse_f64(line, key, v)?,
                ("scales", "ell") => scales.reference_length = parse_f64(line, key, v)?,
                ("scales", "k0") => scales.wavenumber = parse_f64(line, key, v)?,
                ("scales", "ell_c") => scales.correlation_length = parse_f64(line, key, v)?,
                ("scales", "sigma") => scales.sigma = parse_f64(line, key, v)?,
                ("scales", "delta") => scales_delta = parse_f64(line, key, v)?,
                ("model", "k") => model.k = parse_f64(line, key, v)?,
                ("model", "l_c") => model.l_c = parse_f64(line, key, v)?,
                ("model", "eps") => model.eps = parse_f64(line, key, v)?,
                ("model", "beta") => model.beta = parse_f64(line, key, v)?,
                ("model", "delta") => model.delta = parse_f64(line, key, v)?,
                ("model", "fresnel") => model.fresnel = parse_f64(line, key, v)?,
                ("regime", "eps_max") => cfg.regime.eps_max = parse_f64(line, key, v)?,
                ("regime", "fresnel_min") => cfg.regime.fresnel_min = parse_f64(line, key, v)?,
                ("regime", "fresnel_max") => cfg.regime.fresnel_max = parse_f64(line, key, v)?,
                ("regime", "high_frequency_mu") => cfg.regime.high_frequency_mu = parse_f64(line, key, v)?,
                ("regime", "long_wave_mu") => cfg.regime.long_wave_mu = parse_f64(line, key, v)?,
                ("grid", "n") => cfg.grid.n = parse_usize(line, key, v)?,
                ("grid", "extent") => cfg.grid.extent = parse_f64(line, key, v)?,
                ("grid", "beam_width") => cfg.grid.beam_width = parse_f64(line, key, v)?,
                ("grid", "amplitude") => cfg.grid.amplitude = parse_f64(line, key, v)?,
                ("run", "z_end") => cfg.run.z_end = parse_f64(line, key, v)?,
                ("run", "dz") => cfg.run.dz = parse_f64(line, key, v)?,
                ("run", "snapshots") => cfg.run.snapshots = list(line, key, v)?,
                ("run", "n_paths") => cfg.run.n_paths = parse_u64(line, key, v)?,
                ("run", "master_seed") => cfg.run.master_seed = Some(parse_u64(line, key, v)?),
                ("run", "c_stab") => cfg.run.c_stab = parse_f64(line, key, v)?,
                ("run", "initial_slope") => {
                    cfg.run.initial_slope = match v {
                        "zero" => InitialSlope::Zero,
                        "paraxial" => InitialSlope::Paraxial,
                        _ => return err(line, format!("initial_slope: expected zero or paraxial, found {v:?}")),
                    }
                }
                ("experiment", "name") => {
                    if v.is_empty() {
                        return err(line, "name must not be empty");
                    }
                    cfg.experiment.name = v.to_string();
                }
                ("experiment", "eps_list") => cfg.experiment.eps_list = list(line, key, v)?,
                ("experiment", "seed_mode") => {
                    cfg.experiment.seed_mode = match v {
                        "shared" => SeedSelection::Shared,
                        "independent" => SeedSelection::Independent,
                        "both" => SeedSelection::Both,
                        _ => return err(line, format!("seed_mode: expected shared, independent or both, found {v:?}")),
                    }
                }
                ("experiment", "noise_steps") => cfg.experiment.noise_steps = parse_usize(line, key, v)?,
                ("experiment", "noise_dz") => cfg.experiment.noise_dz = Some(parse_f64(line, key, v)?),
                ("experiment", "max_lag") => cfg.experiment.max_lag = Some(parse_usize(line, key, v)?),
                ("experiment", "dump_noise") => cfg.experiment.dump_noise = parse_bool(line, key, v)?,
                ("experiment", "n_tuples") => cfg.experiment.n_tuples = parse_usize(line, key, v)?,
                ("experiment", "tuple_seed") => cfg.experiment.tuple_seed = parse_u64(line, key, v)?,
                ("experiment", "u_r") => cfg.experiment.u_r = parse_f64(line, key, v)?,
                ("experiment", "u_i") => cfg.experiment.u_i = parse_f64(line, key, v)?,
                ("experiment", "decay_source") => {
                    cfg.experiment.decay_source = match v {
                        "ensemble" => DecaySource::Ensemble,
                        "exact" => DecaySource::Exact,
                        _ => return err(line, format!("decay_source: expected ensemble or exact, found {v:?}")),
                    }
                }
                ("experiment", "decay_tolerance") => cfg.experiment.decay_tolerance = parse_f64(line, key, v)?,
                ("experiment", "mu_list") => cfg.experiment.mu_list = list(line, key, v)?,
                ("experiment", "dump_paths") => cfg.experiment.dump_paths = parse_u64(line, key, v)?,
                _ => return err(line, format!("unknown key {key:?} in [{sec}]")),
            }
        }
        cfg.params = match source {
            Some(("model", _)) => ParamSource::Model(model),
            _ => ParamSource::Scales { scales, delta: scales_delta },
        };
        Ok(cfg)
    }

    /// Writes every field; `parse` of the result reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        match &self.params {
            ParamSource::Scales { scales, delta } => {
                let _ = writeln!(s, "[scales]");
                let _ = writeln!(s, "L = {:?}", scales.propagation_length);
                let _ = writeln!(s, "L_x = {:?}", scales.transverse_scale);
                let _ = writeln!(s, "ell = {:?}", scales.reference_length);
                let _ = writeln!(s, "k0 = {:?}", scales.wavenumber);
                let _ = writeln!(s, "ell_c = {:?}", scales.correlation_length);
                let _ = writeln!(s, "sigma = {:?}", scales.sigma);
                let _ = writeln!(s, "delta = {delta:?}");
            }
            ParamSource::Model(m) => {
                let _ = writeln!(s, "[model]");
                let _ = writeln!(s, "k = {:?}", m.k);
                let _ = writeln!(s, "l_c = {:?}", m.l_c);
                let _ = writeln!(s, "eps = {:?}", m.eps);
                let _ = writeln!(s, "beta = {:?}", m.beta);
                let _ = writeln!(s, "delta = {:?}", m.delta);
                let _ = writeln!(s, "fresnel = {:?}", m.fresnel);
            }
        }
        let r = &self.regime;
        let _ = writeln!(s, "\n[regime]");
        let _ = writeln!(s, "eps_max = {:?}", r.eps_max);
        let _ = writeln!(s, "fresnel_min = {:?}", r.fresnel_min);
        let _ = writeln!(s, "fresnel_max = {:?}", r.fresnel_max);
        let _ = writeln!(s, "high_frequency_mu = {:?}", r.high_frequency_mu);
        let _ = writeln!(s, "long_wave_mu = {:?}", r.long_wave_mu);
        let g = &self.grid;
        let _ = writeln!(s, "\n[grid]");
        let _ = writeln!(s, "n = {}", g.n);
        let _ = writeln!(s, "extent = {:?}", g.extent);
        let _ = writeln!(s, "beam_width = {:?}", g.beam_width);
        let _ = writeln!(s, "amplitude = {:?}", g.amplitude);
        let run = &self.run;
        let _ = writeln!(s, "\n[run]");
        let _ = writeln!(s, "z_end = {:?}", run.z_end);
        let _ = writeln!(s, "dz = {:?}", run.dz);
        let _ = writeln!(s, "snapshots = {}", fmt_list(&run.snapshots));
        let _ = writeln!(s, "n_paths = {}", run.n_paths);
        if let Some(seed) = run.master_seed {
            let _ = writeln!(s, "master_seed = {seed}");
        }
        let _ = writeln!(s, "c_stab = {:?}", run.c_stab);
        let _ = writeln!(s, "initial_slope = {}", slope_name(run.initial_slope));
        let e = &self.experiment;
        let _ = writeln!(s, "\n[experiment]");
        let _ = writeln!(s, "name = {}", e.name);
        let _ = writeln!(s, "eps_list = {}", fmt_list(&e.eps_list));
        let _ = writeln!(s, "seed_mode = {}", e.seed_mode.as_str());
        let _ = writeln!(s, "noise_steps = {}", e.noise_steps);
        if let Some(dz) = e.noise_dz {
            let _ = writeln!(s, "noise_dz = {dz:?}");
        }
        if let Some(lag) = e.max_lag {
            let _ = writeln!(s, "max_lag = {lag}");
        }
        let _ = writeln!(s, "dump_noise = {}", e.dump_noise);
        let _ = writeln!(s, "n_tuples = {}", e.n_tuples);
        let _ = writeln!(s, "tuple_seed = {}", e.tuple_seed);
        let _ = writeln!(s, "u_r = {:?}", e.u_r);
        let _ = writeln!(s, "u_i = {:?}", e.u_i);
        let _ = writeln!(s, "decay_source = {}", e.decay_source.as_str());
        let _ = writeln!(s, "decay_tolerance = {:?}", e.decay_tolerance);
        let _ = writeln!(s, "mu_list = {}", fmt_list(&e.mu_list));
        let _ = writeln!(s, "dump_paths = {}", e.dump_paths);
        s
    }

    pub fn model_params(&self) -> Result<ModelParams, paraxial_core::Error> {
        match &self.params {
            ParamSource::Scales { scales, delta } => derive_params(scales, *delta),
            ParamSource::Model(m) => ModelParams::new(m.k, m.l_c, m.eps, m.beta, m.delta, m.fresnel),
        }
    }

    pub fn set_delta(&mut self, value: f64) {
        match &mut self.params {
            ParamSource::Scales { delta, .. } => *delta = value,
            ParamSource::Model(m) => m.delta = value,
        }
    }

    pub fn master_seed(&self) -> Result<u64, ConfigError> {
        self.run.master_seed.ok_or_else(|| ConfigError {
            line: None,
            message: "run.master_seed is required for ensemble runs (set it in [run] or pass --seed)".to_string(),
        })
    }
}
