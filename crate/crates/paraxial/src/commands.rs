//! The experiments behind each subcommand.
//!
//! Every command reads a [`Context`], writes its tables, plots, field dumps
//! and a `manifest.json` into the output directory, and returns an
//! [`Outcome`] whose checks decide the exit status.

use std::io;
use std::path::PathBuf;

use num_complex::Complex64;
use paraxial_core::analysis::{
    convergence_study, decay_constant_theory, decay_samples, fit_decay, mu_expansion_at, mu_expansion_check,
    ConvergenceConfig, ConvergenceTable, DecaySample, SeedMode,
};
use paraxial_core::ensemble::{control_mean, full_ensemble, spde_ensemble, FullEnsembleSpec};
use paraxial_core::fullmodel::{max_step, regularized_free_propagation, solve_full, FullSolver, InitialSlope};
use paraxial_core::grid::{gaussian_beam, make_grid, Space, SpectralField};
use paraxial_core::homog::{
    build_gamma, default_delta_sweep, limit_noncommutativity_demo, random_tuples, stationary_covariance_closed_form,
    stationary_covariance_numeric, verify_appendix_a, TupleRanges, APPENDIX_TOLERANCE, EIGEN_TOLERANCE, ENTRY_NAMES,
};
use paraxial_core::noise::{autocovariance_check, sample_ou_path, sample_wiener_path, LagEstimate, OuPath, StreamId};
use paraxial_core::scales::ModelParams;
use paraxial_core::spde::{
    closed_form_solution, coherent_field, free_propagate, second_moment, solve_spde_path, spde_coefficients,
    SpdeCoefficients,
};
use paraxial_core::Error;
use serde_json::{json, Value};

use crate::config::{ConfigError, DecaySource, RunConfig, SeedSelection};
use crate::exec::RayonExecutor;
use crate::formats::{write_field, write_path, FormatError};
use crate::plot::{LinePlot, Series};
use crate::report::{manifest, Artifacts, Check, ManifestInput, Outcome};

/// Bound on autocovariance deviations, in standard errors.
pub const NOISE_SIGMAS: f64 = 3.0;
/// Per-mode modulus law of the limiting equation, relative to the largest mode.
pub const MODULUS_TOLERANCE: f64 = 1e-12;
/// Pathwise norm law and closed-form oracle comparisons.
pub const ORACLE_TOLERANCE: f64 = 1e-10;
/// `β = 0` full-model runs against exact regularized free propagation.
pub const BETA0_TOLERANCE: f64 = 1e-10;
/// Accepted range of the remainder ratio `R(μ) / R(μ/2)` for `μ <= 0.2`.
pub const MU_RATIO_RANGE: (f64, f64) = (3.5, 4.5);
pub const MU_RATIO_MAX_MU: f64 = 0.2;
/// Largest accepted `z_end` times the fastest free growth rate over the grid's
/// modes. Beyond it, modes that are not in the limiting model swamp the run.
pub const GROWTH_EXPONENT_MAX: f64 = 1.0;

#[derive(Debug, thiserror::Error)]
pub enum CommandError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Core(#[from] Error),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Format(#[from] FormatError),
    #[error("thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
    #[error("refused: {0}")]
    Refused(String),
}

type Result<T> = std::result::Result<T, CommandError>;

/// Inputs shared by all commands after command-line overrides are applied.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: RunConfig,
    pub workers: usize,
    pub out: PathBuf,
    pub oracle_check: bool,
}

impl Context {
    pub fn new(config: RunConfig, out: impl Into<PathBuf>) -> Self {
        Context { config, workers: 1, out: out.into(), oracle_check: false }
    }
}

struct Setup {
    p: ModelParams,
    exec: RayonExecutor,
    files: Artifacts,
}

fn setup(ctx: &Context) -> Result<Setup> {
    let p = ctx.config.model_params()?;
    Ok(Setup { p, exec: RayonExecutor::new(ctx.workers)?, files: Artifacts::create(&ctx.out)? })
}

fn initial_field(cfg: &RunConfig) -> Result<SpectralField> {
    let grid = make_grid(cfg.grid.n, cfg.grid.extent)?;
    Ok(gaussian_beam(grid, cfg.grid.beam_width, cfg.grid.amplitude)?)
}

fn grid_json(cfg: &RunConfig, u0: &SpectralField) -> Value {
    json!({
        "n": cfg.grid.n,
        "extent": cfg.grid.extent,
        "beam_width": cfg.grid.beam_width,
        "amplitude": cfg.grid.amplitude,
        "beam_fits": u0.grid().beam_fits(cfg.grid.beam_width),
    })
}

fn seeds_json(master_seed: u64, n_paths: u64) -> Value {
    json!({ "master_seed": master_seed, "n_paths": n_paths, "streams": "path i draws from stream (master_seed, i)" })
}

/// Snapshot positions: the configured ones below `z_end`, then `z_end`.
fn snapshot_zs(cfg: &RunConfig) -> Vec<f64> {
    let mut zs: Vec<f64> = cfg.run.snapshots.iter().copied().filter(|&z| z < cfg.run.z_end).collect();
    zs.push(cfg.run.z_end);
    zs
}

/// Number of `dz` steps reaching `z`, which must be a multiple of `dz`.
fn steps_to(z: f64, dz: f64) -> Result<usize> {
    let n = (z / dz).round();
    if !(n >= 1.0) || (n * dz - z).abs() > 1e-9 * z.abs().max(dz) {
        return Err(Error::Domain { name: "snapshot z", value: z, expected: "a positive multiple of run.dz" }.into());
    }
    Ok(n as usize)
}

fn l2(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

fn relative_l2(est: &[Complex64], reference: &[Complex64]) -> f64 {
    l2(est.iter().zip(reference).map(|(a, b)| (a - b).norm())) / l2(reference.iter().map(|b| b.norm()))
}

/// `max |a - b| / max |b|`.
pub fn max_pointwise_error(a: &[Complex64], b: &[Complex64]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
    num / b.iter().map(|y| y.norm()).fold(0.0, f64::max)
}

fn free_solution(u0: &SpectralField, diffraction: f64, z: f64) -> Result<SpectralField> {
    let mut f = u0.to_spectral()?;
    free_propagate(&mut f, diffraction, z)?;
    Ok(f.into_physical()?)
}

fn finish(
    ctx: &Context,
    mut files: Artifacts,
    command: &'static str,
    params: Option<&ModelParams>,
    seeds: Value,
    tolerances: Value,
    extra: Value,
    checks: Vec<Check>,
    report: Value,
) -> Result<Outcome> {
    let m = manifest(
        ManifestInput {
            command,
            config_text: ctx.config.to_text(),
            params,
            thresholds: &ctx.config.regime,
            seeds,
            workers: ctx.workers,
            tolerances,
            extra,
        },
        &checks,
        files.written(),
    );
    files.json("manifest.json", &m)?;
    Ok(Outcome { command, checks, report, outputs: files.into_written() })
}

/// Lag autocovariances of one medium path with a fitted correlation length.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseAnalysis {
    pub lags: Vec<LagEstimate>,
    pub max_abs_z: f64,
    /// `ε² l_c` of the parameters the path is compared against.
    pub correlation_z: f64,
    /// Decay length of `log(2 C(lag))` fitted through the origin over lags
    /// whose estimate clears three standard errors.
    pub fitted_correlation_z: f64,
}

pub fn analyze_noise(path: &OuPath, p: &ModelParams, max_lag: usize) -> NoiseAnalysis {
    let lags = autocovariance_check(path, p, max_lag);
    let max_abs_z = lags.iter().map(|l| l.z_score().abs()).fold(0.0, f64::max);
    let usable: Vec<&LagEstimate> =
        lags.iter().filter(|l| l.lag_steps > 0 && l.estimate > NOISE_SIGMAS * l.stderr).collect();
    let sxx: f64 = usable.iter().map(|l| l.lag * l.lag).sum();
    let sxy: f64 = usable.iter().map(|l| l.lag * (2.0 * l.estimate).ln()).sum();
    let fitted_correlation_z = if sxx > 0.0 && sxy < 0.0 { -sxx / sxy } else { f64::NAN };
    NoiseAnalysis { lags, max_abs_z, correlation_z: p.correlation_z(), fitted_correlation_z }
}

/// Default autocovariance range: five correlation lengths.
pub fn default_max_lag(p: &ModelParams, dz: f64) -> usize {
    (5.0 * p.correlation_z() / dz).ceil() as usize
}

pub fn validate_noise(ctx: &Context) -> Result<Outcome> {
    let Setup { p, mut files, .. } = setup(ctx)?;
    let e = &ctx.config.experiment;
    let seed = ctx.config.master_seed()?;
    let dz = e.noise_dz.unwrap_or(p.correlation_z() / 10.0);
    let max_lag = e.max_lag.unwrap_or_else(|| default_max_lag(&p, dz));
    let path = sample_ou_path(&p, e.noise_steps, dz, StreamId::new(seed, 0))?;
    let a = analyze_noise(&path, &p, max_lag);

    let rows: Vec<Vec<f64>> = a
        .lags
        .iter()
        .map(|l| vec![l.lag_steps as f64, l.lag, l.estimate, l.theory, l.stderr, l.z_score()])
        .collect();
    files.csv("noise_autocovariance.csv", &["lag_steps", "lag", "estimate", "theory", "stderr", "z_score"], &rows)?;
    let plot = LinePlot::new("OU autocovariance", "lag", "covariance")
        .with(Series::markers("sample", a.lags.iter().map(|l| (l.lag, l.estimate)).collect()))
        .with(Series::line("(1/2) exp(-lag / eps^2 l_c)", a.lags.iter().map(|l| (l.lag, l.theory)).collect()))
        .with(Series::dashed(
            "theory + 3 SE",
            a.lags.iter().map(|l| (l.lag, l.theory + NOISE_SIGMAS * l.stderr)).collect(),
        ))
        .with(Series::dashed(
            "theory - 3 SE",
            a.lags.iter().map(|l| (l.lag, l.theory - NOISE_SIGMAS * l.stderr)).collect(),
        ));
    files.svg("noise_autocovariance.svg", &plot)?;
    if e.dump_noise {
        let mut bytes = Vec::new();
        write_path(&mut bytes, &path)?;
        files.bytes("noise_path.oup", &bytes)?;
    }

    let checks = vec![Check::at_most("autocovariance_within_3se", a.max_abs_z, NOISE_SIGMAS)];
    let lag0 = a.lags[0];
    let report = json!({
        "n_steps": e.noise_steps,
        "z_step": dz,
        "max_lag": max_lag,
        "max_abs_z_score": a.max_abs_z,
        "lag0": { "estimate": lag0.estimate, "theory": lag0.theory, "stderr": lag0.stderr },
        "correlation_z": a.correlation_z,
        "fitted_correlation_z": a.fitted_correlation_z,
    });
    files.json("noise_report.json", &report)?;
    finish(
        ctx,
        files,
        "validate-noise",
        Some(&p),
        seeds_json(seed, 1),
        json!({ "z_score_max": NOISE_SIGMAS }),
        json!({ "noise": report.clone() }),
        checks,
        report,
    )
}

pub fn verify_covariance(ctx: &Context) -> Result<Outcome> {
    let p = ctx.config.model_params()?;
    if !(p.delta() > 0.0) {
        return Err(CommandError::Refused(Error::Unregularized { delta: p.delta() }.to_string()));
    }
    let Setup { mut files, .. } = setup(ctx)?;
    let e = &ctx.config.experiment;
    let ranges = TupleRanges::default();
    let tuples = random_tuples(e.n_tuples, &ranges, e.tuple_seed)?;
    let report = verify_appendix_a(&tuples, stationary_covariance_closed_form)?;
    let demo = limit_noncommutativity_demo(&p, e.u_r, e.u_i, &default_delta_sweep())?;
    let closed = stationary_covariance_closed_form(&p, e.u_r, e.u_i)?;
    let numeric = stationary_covariance_numeric(&build_gamma(&p, e.u_r, e.u_i)?)?;

    let entry_rows: Vec<Vec<f64>> = report.max_entry_error.iter().map(|err| vec![*err, report.tolerance]).collect();
    {
        // the entry name column is text, so this table is written by hand
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["entry", "max_relative_error", "tolerance", "pass"])?;
        for (name, row) in ENTRY_NAMES.iter().zip(&entry_rows) {
            w.write_record([
                name.to_string(),
                format!("{:?}", row[0]),
                format!("{:?}", row[1]),
                (row[0] <= row[1]).to_string(),
            ])?;
        }
        let data = w.into_inner().map_err(|err| csv::Error::from(err.into_error()))?;
        files.bytes("covariance_entries.csv", &data)?;
    }
    let demo_rows: Vec<Vec<f64>> = demo
        .rows
        .iter()
        .map(|r| vec![r.delta, r.delta_vrvr, r.delta_vrvr_numeric, r.c_delta.re, r.c_delta.im, r.c_gap])
        .collect();
    files.csv(
        "noncommuting_limits.csv",
        &["delta", "delta_vrvr", "delta_vrvr_numeric", "c_re", "c_im", "c_gap"],
        &demo_rows,
    )?;
    let plot = LinePlot::new("delta * vRvR as delta -> 0", "delta", "delta * vRvR")
        .log_x()
        .with(Series::markers("closed form", demo.rows.iter().map(|r| (r.delta, r.delta_vrvr)).collect()))
        .with(Series::line("Lyapunov solve", demo.rows.iter().map(|r| (r.delta, r.delta_vrvr_numeric)).collect()))
        .with(Series::dashed(
            "limit",
            demo.rows.iter().map(|r| (r.delta, demo.delta_vrvr_limit)).collect(),
        ));
    files.svg("noncommuting_limits.svg", &plot)?;

    let differences = demo.successive_differences();
    let checks = vec![
        Check::at_most("covariance_entries", report.max_entry_error.iter().fold(0.0, |m, v| m.max(*v)), APPENDIX_TOLERANCE),
        Check::holds("etaeta_closed_form_exact", report.etaeta_exact, 0.5),
        Check::at_most("etaeta_numeric_ulps", report.etaeta_numeric_ulps, 4.0),
        Check::at_most("eigenvalues", report.max_eigenvalue_error, EIGEN_TOLERANCE),
        Check::above("covariance_positive_definite", report.min_eigenvalue, 0.0),
        Check::holds(
            "delta_vrvr_differences_decrease",
            demo.differences_decrease(),
            differences.last().copied().unwrap_or(f64::NAN),
        ),
        Check::holds("drift_lipschitz_at_zero", demo.pass(), demo.fitted_k),
    ];
    let entries: serde_json::Map<String, Value> =
        ENTRY_NAMES.iter().zip(&report.max_entry_error).map(|(n, v)| (n.to_string(), json!(v))).collect();
    let worst = report.worst_tuple.map(|t| {
        json!({
            "k": t.params.k(), "beta": t.params.beta(), "l_c": t.params.l_c(), "delta": t.params.delta(),
            "u_r": t.u_r, "u_i": t.u_i,
        })
    });
    let point: serde_json::Map<String, Value> = ENTRY_NAMES
        .iter()
        .zip(closed.entries().iter().zip(numeric.entries()))
        .map(|(n, (c, v))| (n.to_string(), json!({ "closed_form": c, "numeric": v })))
        .collect();
    let json_report = json!({
        "status": if checks.iter().all(|c| c.pass) { "PASS" } else { "FAIL" },
        "grid": {
            "n_tuples": report.n_tuples,
            "tuple_seed": e.tuple_seed,
            "k": [ranges.k.0, ranges.k.1],
            "beta": [ranges.beta.0, ranges.beta.1],
            "l_c": [ranges.l_c.0, ranges.l_c.1],
            "delta_log_uniform": [ranges.delta.0, ranges.delta.1],
            "u": [ranges.u.0, ranges.u.1],
        },
        "max_entry_error": entries,
        "worst_entry": report.worst_entry,
        "worst_tuple": worst,
        "max_eigenvalue_error": report.max_eigenvalue_error,
        "max_lyapunov_residual": report.max_residual,
        "min_scaled_eigenvalue": report.min_eigenvalue,
        "etaeta_exact": report.etaeta_exact,
        "etaeta_numeric_ulps": report.etaeta_numeric_ulps,
        "tolerance": report.tolerance,
        "eigen_tolerance": report.eigen_tolerance,
        "config_point": { "u_r": e.u_r, "u_i": e.u_i, "entries": point },
        "noncommuting_limits": {
            "deltas": demo.rows.iter().map(|r| r.delta).collect::<Vec<_>>(),
            "delta_vrvr": demo.rows.iter().map(|r| r.delta_vrvr).collect::<Vec<_>>(),
            "successive_differences": differences,
            "delta_vrvr_limit": demo.delta_vrvr_limit,
            "c_zero": [demo.c_zero.re, demo.c_zero.im],
            "fitted_k": demo.fitted_k,
        },
        "checks": checks.iter().map(Check::to_json).collect::<Vec<_>>(),
    });
    files.json("covariance_report.json", &json_report)?;
    finish(
        ctx,
        files,
        "verify-covariance",
        Some(&p),
        json!({ "tuple_seed": e.tuple_seed }),
        json!({ "covariance": APPENDIX_TOLERANCE, "eigenvalues": EIGEN_TOLERANCE, "etaeta_numeric_ulps": 4.0 }),
        json!({}),
        checks,
        json_report,
    )
}

fn coefficients_json(coeff: &SpdeCoefficients) -> Value {
    json!({
        "c": [coeff.drift.re, coeff.drift.im],
        "g": coeff.noise,
        "diffr": coeff.diffraction,
        "norm_growth_rate": coeff.norm_growth_rate(),
    })
}

fn dump_field(files: &mut Artifacts, name: &str, field: &SpectralField, z: f64) -> Result<()> {
    let mut bytes = Vec::new();
    write_field(&mut bytes, field, z)?;
    files.bytes(name, &bytes)?;
    Ok(())
}

pub fn run_spde(ctx: &Context) -> Result<Outcome> {
    let Setup { p, exec, mut files } = setup(ctx)?;
    let cfg = &ctx.config;
    let seed = cfg.master_seed()?;
    let u0 = initial_field(cfg)?;
    let coeff = spde_coefficients(&p);
    let dz = cfg.run.dz;
    let zs = snapshot_zs(cfg);
    let steps = zs.iter().map(|&z| steps_to(z, dz)).collect::<Result<Vec<_>>>()?;
    let stats = spde_ensemble(&exec, &u0, &coeff, dz, &steps, cfg.run.n_paths, seed)?;

    let u0_spec = u0.to_spectral()?;
    let u0_max = u0_spec.data().iter().map(|v| v.norm()).fold(0.0, f64::max);
    let u0_norm = u0.norm_sq().sqrt();
    let rate = coeff.norm_growth_rate();
    let n_steps = *steps.last().unwrap_or(&0);
    let checked = cfg.run.n_paths.min(cfg.experiment.dump_paths.max(1));
    let (mut modulus_err, mut norm_err, mut oracle_err) = (0.0f64, 0.0f64, 0.0f64);
    for path in 0..checked {
        let w = sample_wiener_path(n_steps, dz, StreamId::new(seed, path))?;
        let snaps = solve_spde_path(&u0, &coeff, dz, &w, &steps)?;
        for (i, (snap, &n)) in snaps.iter().zip(&steps).enumerate() {
            let gain = (rate * snap.z).exp();
            let spec = snap.field.to_spectral()?;
            let dev = spec.data().iter().zip(u0_spec.data()).map(|(a, b)| (a.norm() - gain * b.norm()).abs());
            modulus_err = modulus_err.max(dev.fold(0.0, f64::max) / (gain * u0_max));
            norm_err = norm_err.max((snap.field.norm_sq().sqrt() / u0_norm / gain - 1.0).abs());
            if ctx.oracle_check {
                let oracle = closed_form_solution(&u0, &w[..n], snap.z, &coeff)?.into_space(Space::Physical)?;
                oracle_err = oracle_err.max(max_pointwise_error(snap.field.data(), oracle.data()));
            }
            if path < cfg.experiment.dump_paths {
                dump_field(&mut files, &format!("path{path:04}_z{i:03}.fld"), &snap.field, snap.z)?;
            }
        }
    }

    let probe = u0.grid().origin();
    let mut rows = Vec::new();
    let mut mean_errors = Vec::new();
    for (i, (&z, s)) in zs.iter().zip(&stats.fields).enumerate() {
        let mean = SpectralField::new(u0.grid().clone(), s.mean(), Space::Physical)?;
        dump_field(&mut files, &format!("mean_z{i:03}.fld"), &mean, z)?;
        let coherent = coherent_field(&u0, z, &coeff)?.into_space(Space::Physical)?;
        let second = second_moment(&u0, z, &coeff)?;
        let err = relative_l2(mean.data(), coherent.data());
        let se = l2(s.mean_stderr().into_iter()) / l2(coherent.data().iter().map(|v| v.norm()));
        mean_errors.push(json!({ "z": z, "relative_error": err, "stderr": se }));
        let m = mean.data()[probe];
        let c = coherent.data()[probe];
        rows.push(vec![z, m.re, m.im, s.mean_stderr()[probe], c.re, c.im, s.second_moment()[probe], second[probe], err, se]);
    }
    files.csv(
        "spde_snapshots.csv",
        &[
            "z",
            "mean_re",
            "mean_im",
            "mean_stderr",
            "coherent_re",
            "coherent_im",
            "second_moment",
            "second_moment_theory",
            "mean_relative_error",
            "mean_relative_stderr",
        ],
        &rows,
    )?;
    let plot = LinePlot::new("coherent field at the beam center", "z", "|E u|")
        .with(Series::markers("ensemble", rows.iter().map(|r| (r[0], Complex64::new(r[1], r[2]).norm())).collect()))
        .with(Series::line("theory", rows.iter().map(|r| (r[0], Complex64::new(r[4], r[5]).norm())).collect()));
    files.svg("spde_coherent.svg", &plot)?;

    let mut checks = vec![
        Check::at_most("per_mode_modulus_law", modulus_err, MODULUS_TOLERANCE),
        Check::at_most("pathwise_norm_law", norm_err, ORACLE_TOLERANCE),
    ];
    if ctx.oracle_check {
        checks.push(Check::at_most("closed_form_oracle", oracle_err, ORACLE_TOLERANCE));
    }
    let report = json!({
        "coefficients": coefficients_json(&coeff),
        "checked_paths": checked,
        "per_mode_modulus_error": modulus_err,
        "pathwise_norm_error": norm_err,
        "oracle_error": if ctx.oracle_check { json!(oracle_err) } else { Value::Null },
        "mean_vs_coherent": mean_errors,
    });
    files.json("spde_report.json", &report)?;
    finish(
        ctx,
        files,
        "run-spde",
        Some(&p),
        seeds_json(seed, cfg.run.n_paths),
        json!({ "per_mode_modulus": MODULUS_TOLERANCE, "pathwise_norm": ORACLE_TOLERANCE, "oracle": ORACLE_TOLERANCE }),
        json!({
            "coefficients": coefficients_json(&coeff),
            "grid": grid_json(cfg, &u0),
            "dz": dz,
            "snapshot_zs": zs,
            "scheme": "exact split step: per-mode free phase exp(-i diffr |kappa|^2 dz) times the scalar exp((c + g^2/2) dz + i g dW)",
        }),
        checks,
        report,
    )
}

fn slope_str(s: InitialSlope) -> &'static str {
    match s {
        InitialSlope::Zero => "zero",
        InitialSlope::Paraxial => "paraxial",
    }
}

pub fn run_full(ctx: &Context) -> Result<Outcome> {
    let Setup { p, exec, mut files } = setup(ctx)?;
    let cfg = &ctx.config;
    let seed = cfg.master_seed()?;
    let u0 = initial_field(cfg)?;
    let solver = FullSolver::with_stability(&p, u0.grid().clone(), cfg.run.c_stab)?;
    let zs = snapshot_zs(cfg);
    let extra_zs: Vec<f64> = zs[..zs.len() - 1].to_vec();
    let mut spec = FullEnsembleSpec::new(cfg.run.z_end, cfg.run.n_paths, seed);
    spec.snapshot_zs = extra_zs.clone();
    spec.slope = cfg.run.initial_slope;
    spec.c_stab = cfg.run.c_stab;
    let ens = full_ensemble(&exec, &u0, &p, &spec)?;
    let coeff = spde_coefficients(&p);
    let h_max = solver.max_step();
    let mut steps_per_gap = Vec::new();
    let mut prev = 0.0;
    for &z in &zs {
        let gap: f64 = z - prev;
        steps_per_gap.push(if gap > 0.0 { (gap / h_max).ceil().max(1.0) as u64 } else { 0 });
        prev = z;
    }

    let mut solver = solver;
    for path in 0..cfg.run.n_paths.min(cfg.experiment.dump_paths) {
        let tr = solver.solve(&u0, cfg.run.z_end, StreamId::new(seed, path), &extra_zs, cfg.run.initial_slope)?;
        for (i, snap) in tr.snapshots.iter().enumerate() {
            dump_field(&mut files, &format!("path{path:04}_z{i:03}.fld"), &snap.u_hat, snap.z)?;
        }
    }

    let probe = u0.grid().origin();
    let mut rows = Vec::new();
    let mut all_finite = true;
    for (i, &z) in ens.zs.iter().enumerate() {
        let raw = ens.fields[i].mean();
        all_finite &= raw.iter().all(|v| v.re.is_finite() && v.im.is_finite());
        let mean = SpectralField::new(u0.grid().clone(), raw.clone(), Space::Physical)?;
        dump_field(&mut files, &format!("mean_z{i:03}.fld"), &mean, z)?;
        let coherent = coherent_field(&u0, z, &coeff)?.into_space(Space::Physical)?;
        let free = free_solution(&u0, coeff.diffraction, z)?;
        let m = control_mean(&p, z);
        let cv: Vec<Complex64> =
            ens.residuals[i].mean().iter().zip(free.data()).map(|(r, s)| r + m * s).collect();
        let norm_u = l2(coherent.data().iter().map(|v| v.norm()));
        rows.push(vec![
            z,
            relative_l2(&raw, coherent.data()),
            l2(ens.fields[i].mean_stderr().into_iter()) / norm_u,
            relative_l2(&cv, coherent.data()),
            l2(ens.residuals[i].mean_stderr().into_iter()) / norm_u,
            ens.pathwise[i].mean()[0].re,
            ens.pathwise[i].mean_stderr()[0],
            raw[probe].re,
            raw[probe].im,
            coherent.data()[probe].re,
            coherent.data()[probe].im,
        ]);
    }
    files.csv(
        "full_snapshots.csv",
        &[
            "z",
            "raw_mean_error",
            "raw_mean_stderr",
            "cv_mean_error",
            "cv_mean_stderr",
            "pathwise_error",
            "pathwise_stderr",
            "mean_re",
            "mean_im",
            "coherent_re",
            "coherent_im",
        ],
        &rows,
    )?;
    let plot = LinePlot::new("full model against the limiting coherent field", "z", "|E u| at the center")
        .with(Series::markers("full model", rows.iter().map(|r| (r[0], Complex64::new(r[7], r[8]).norm())).collect()))
        .with(Series::line("limiting", rows.iter().map(|r| (r[0], Complex64::new(r[9], r[10]).norm())).collect()));
    files.svg("full_coherent.svg", &plot)?;

    let growth = solver.max_free_growth_rate() * cfg.run.z_end;
    let mut checks = vec![
        Check::holds("ensemble_finite", all_finite, rows.len() as f64),
        Check::at_most("mode_growth", growth, GROWTH_EXPONENT_MAX),
    ];
    let mut beta0_err = Value::Null;
    if ctx.oracle_check {
        let p0 = p.with_beta(0.0)?;
        let tr = solve_full(&u0, &p0, cfg.run.z_end, StreamId::new(seed, 0), &extra_zs, cfg.run.initial_slope)?;
        let mut worst = 0.0f64;
        for snap in &tr.snapshots {
            let exact = regularized_free_propagation(&u0, &p0, snap.z, cfg.run.initial_slope)?;
            worst = worst.max(max_pointwise_error(snap.u_hat.data(), exact.u_hat.data()));
        }
        beta0_err = json!(worst);
        checks.push(Check::at_most("beta0_regularized_oracle", worst, BETA0_TOLERANCE));
    }
    let report = json!({
        "max_step": h_max,
        "max_growth_exponent": growth,
        "steps_per_gap": steps_per_gap,
        "snapshots": rows.iter().map(|r| json!({
            "z": r[0], "raw_mean_error": r[1], "raw_mean_stderr": r[2], "cv_mean_error": r[3],
            "cv_mean_stderr": r[4], "pathwise_error": r[5], "pathwise_stderr": r[6],
        })).collect::<Vec<_>>(),
        "beta0_regularized_error": beta0_err,
    });
    files.json("full_report.json", &report)?;
    finish(
        ctx,
        files,
        "run-full",
        Some(&p),
        seeds_json(seed, cfg.run.n_paths),
        json!({ "beta0_regularized": BETA0_TOLERANCE, "growth_exponent": GROWTH_EXPONENT_MAX }),
        json!({
            "grid": grid_json(cfg, &u0),
            "max_step": h_max,
            "max_growth_exponent": growth,
            "c_stab": cfg.run.c_stab,
            "steps_per_gap": steps_per_gap,
            "snapshot_zs": zs,
            "initial_slope": slope_str(cfg.run.initial_slope),
            "scheme": "exponential midpoint: exact 2x2 exponential per mode with the medium frozen at the step midpoint, medium from exact OU transitions",
            "limiting_coefficients": coefficients_json(&coeff),
        }),
        checks,
        report,
    )
}

pub fn decay_fit(ctx: &Context) -> Result<Outcome> {
    let Setup { p, exec, mut files } = setup(ctx)?;
    let cfg = &ctx.config;
    let u0 = initial_field(cfg)?;
    let coeff = spde_coefficients(&p);
    let zs = snapshot_zs(cfg);
    let probe = u0.grid().origin();
    let source = cfg.experiment.decay_source;
    let (samples, seed) = match source {
        DecaySource::Exact => {
            let samples = zs
                .iter()
                .map(|&z| {
                    let mean = coherent_field(&u0, z, &coeff)?.into_space(Space::Physical)?.data()[probe];
                    let free = free_solution(&u0, coeff.diffraction, z)?.data()[probe];
                    Ok(DecaySample { z, mean, stderr: 0.0, free })
                })
                .collect::<Result<Vec<_>>>()?;
            (samples, None)
        }
        DecaySource::Ensemble => {
            let seed = cfg.master_seed()?;
            let steps = zs.iter().map(|&z| steps_to(z, cfg.run.dz)).collect::<Result<Vec<_>>>()?;
            let stats = spde_ensemble(&exec, &u0, &coeff, cfg.run.dz, &steps, cfg.run.n_paths, seed)?;
            (decay_samples(&stats.zs, &stats.fields, &u0, coeff.diffraction, probe)?, Some(seed))
        }
    };
    let fit = fit_decay(&samples, decay_constant_theory(&p))?;
    let rows: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| {
            let y = s.mean.norm().ln() - s.free.norm().ln();
            vec![s.z, s.mean.re, s.mean.im, s.stderr, y, -fit.lambda_theory * s.z, -fit.lambda_fit * s.z]
        })
        .collect();
    files.csv(
        "decay.csv",
        &["z", "mean_re", "mean_im", "stderr", "log_ratio", "theory_log_ratio", "fit_log_ratio"],
        &rows,
    )?;
    let plot = LinePlot::new("coherent-field decay", "z", "log|E u| - log|S u0|")
        .with(Series::markers("ensemble", rows.iter().map(|r| (r[0], r[4])).collect()))
        .with(Series::line("-Lambda z", rows.iter().map(|r| (r[0], r[5])).collect()))
        .with(Series::dashed("fit", rows.iter().map(|r| (r[0], r[6])).collect()));
    files.svg("decay.svg", &plot)?;
    let tol = cfg.experiment.decay_tolerance;
    let checks = vec![Check::at_most("decay_rate_relative_error", fit.relative_error(), tol)];
    let report = json!({
        "source": source.as_str(),
        "lambda_fit": fit.lambda_fit,
        "lambda_theory": fit.lambda_theory,
        "lambda_at_delta": -coeff.drift.re,
        "stderr": fit.stderr,
        "relative_error": fit.relative_error(),
        "z_window": [fit.z_window.0, fit.z_window.1],
        "n_points": fit.n_points,
    });
    files.json("decay_report.json", &report)?;
    finish(
        ctx,
        files,
        "decay-fit",
        Some(&p),
        seed.map(|s| seeds_json(s, cfg.run.n_paths)).unwrap_or(Value::Null),
        json!({ "decay_relative": tol }),
        json!({ "grid": grid_json(cfg, &u0), "dz": cfg.run.dz, "snapshot_zs": zs }),
        checks,
        report,
    )
}

fn convergence_rows(t: &ConvergenceTable) -> Vec<Vec<f64>> {
    t.rows
        .iter()
        .map(|r| {
            vec![
                r.eps,
                r.mean_error,
                r.mean_stderr,
                r.raw_mean_error,
                r.raw_mean_stderr,
                r.second_moment_error,
                r.probe_error,
                r.pathwise_error,
                r.pathwise_stderr,
                r.beta0_error,
                r.beta0_regularized_error,
            ]
        })
        .collect()
}

pub fn converge(ctx: &Context) -> Result<Outcome> {
    let Setup { p, exec, mut files } = setup(ctx)?;
    let cfg = &ctx.config;
    let seed = cfg.master_seed()?;
    let u0 = initial_field(cfg)?;
    let modes: Vec<SeedMode> = match cfg.experiment.seed_mode {
        SeedSelection::Shared => vec![SeedMode::Shared],
        SeedSelection::Independent => vec![SeedMode::Independent],
        SeedSelection::Both => vec![SeedMode::Shared, SeedMode::Independent],
    };
    let mut growth = Vec::with_capacity(cfg.experiment.eps_list.len());
    for &eps in &cfg.experiment.eps_list {
        let solver = FullSolver::with_stability(&p.with_eps(eps)?, u0.grid().clone(), cfg.run.c_stab)?;
        growth.push(solver.max_free_growth_rate() * cfg.run.z_end);
    }
    let mut checks =
        vec![Check::at_most("mode_growth", growth.iter().fold(0.0, |m: f64, g| m.max(*g)), GROWTH_EXPONENT_MAX)];
    let mut tables = Vec::new();
    let mut plot = LinePlot::new("full model against the limiting coherent field", "eps", "relative L2 error").log_x().log_y();
    for mode in modes {
        let mut study = ConvergenceConfig::new(p, cfg.experiment.eps_list.clone(), cfg.run.z_end, cfg.run.n_paths, seed);
        study.seed_mode = mode;
        study.slope = cfg.run.initial_slope;
        study.c_stab = cfg.run.c_stab;
        let table = convergence_study(&exec, &u0, &study)?;
        let rows = convergence_rows(&table);
        let tag = mode.as_str();
        files.csv(
            &format!("convergence_{tag}.csv"),
            &[
                "eps",
                "mean_error",
                "mean_stderr",
                "raw_mean_error",
                "raw_mean_stderr",
                "second_moment_error",
                "probe_error",
                "pathwise_error",
                "pathwise_stderr",
                "beta0_error",
                "beta0_regularized_error",
            ],
            &rows,
        )?;
        plot = plot
            .with(Series::line(&format!("E u, control variate ({tag})"), rows.iter().map(|r| (r[0], r[1])).collect()))
            .with(Series::dashed(&format!("E u, plain mean ({tag})"), rows.iter().map(|r| (r[0], r[3])).collect()))
            .with(Series::markers(&format!("beta = 0 vs limit ({tag})"), rows.iter().map(|r| (r[0], r[9])).collect()));
        let last = table.rows.last().map(|r| r.mean_error).unwrap_or(f64::NAN);
        checks.push(Check::holds(&format!("mean_error_decreasing_{tag}"), table.mean_error_decreasing(), last));
        checks.push(Check::at_most(
            &format!("beta0_regularized_{tag}"),
            table.beta0_max_regularized_error(),
            BETA0_TOLERANCE,
        ));
        tables.push(json!({
            "seed_mode": tag,
            "master_seeds": (0..table.rows.len()).map(|i| mode.master_for(seed, i)).collect::<Vec<_>>(),
            "mean_error_decreasing": table.mean_error_decreasing(),
            "raw_mean_error_decreasing": table.raw_mean_error_decreasing(),
            "beta0_max_error_vs_limit": table.beta0_max_error(),
            "beta0_max_regularized_error": table.beta0_max_regularized_error(),
            "rows": table.rows.iter().map(|r| json!({
                "eps": r.eps, "mean_error": r.mean_error, "mean_stderr": r.mean_stderr,
                "raw_mean_error": r.raw_mean_error, "raw_mean_stderr": r.raw_mean_stderr,
                "second_moment_error": r.second_moment_error, "probe_error": r.probe_error,
                "pathwise_error": r.pathwise_error, "pathwise_stderr": r.pathwise_stderr,
                "beta0_error": r.beta0_error, "beta0_regularized_error": r.beta0_regularized_error,
                "max_step": max_step(&p.with_eps(r.eps).unwrap_or(p), cfg.run.c_stab),
            })).collect::<Vec<_>>(),
            "growth_exponents": growth,
        }));
    }
    files.svg("convergence.svg", &plot)?;
    let report = json!({ "tables": tables });
    files.json("convergence_report.json", &report)?;
    finish(
        ctx,
        files,
        "converge",
        Some(&p),
        seeds_json(seed, cfg.run.n_paths),
        json!({ "beta0_regularized": BETA0_TOLERANCE, "growth_exponent": GROWTH_EXPONENT_MAX }),
        json!({
            "grid": grid_json(cfg, &u0),
            "growth_exponents": growth,
            "eps_list": cfg.experiment.eps_list,
            "z_end": cfg.run.z_end,
            "c_stab": cfg.run.c_stab,
            "initial_slope": slope_str(cfg.run.initial_slope),
        }),
        checks,
        report,
    )
}

pub fn expand_mu(ctx: &Context) -> Result<Outcome> {
    let Setup { p, mut files, .. } = setup(ctx)?;
    let here = mu_expansion_check(&p);
    let strength = p.k() * p.k() * p.beta() * p.beta() * p.l_c() / 8.0;
    let mut mus = ctx.config.experiment.mu_list.clone();
    mus.sort_by(|a, b| b.total_cmp(a));
    mus.dedup();
    if !mus.contains(&1.0) {
        mus.insert(0, 1.0);
    }
    let reports: Vec<_> = mus.iter().map(|&mu| mu_expansion_at(strength, mu)).collect();
    let rows: Vec<Vec<f64>> = reports
        .iter()
        .map(|r| {
            vec![
                r.mu,
                r.full.re,
                r.full.im,
                r.two_term.re,
                r.two_term.im,
                r.remainder,
                r.ratio.unwrap_or(f64::NAN),
                r.second_term_fraction,
            ]
        })
        .collect();
    files.csv(
        "mu_expansion.csv",
        &["mu", "full_re", "full_im", "two_term_re", "two_term_im", "remainder", "ratio", "second_term_fraction"],
        &rows,
    )?;
    let plot = LinePlot::new("two-term expansion remainder", "mu", "remainder")
        .log_x()
        .log_y()
        .with(Series::markers("remainder", reports.iter().map(|r| (r.mu, r.remainder)).collect()))
        .with(Series::dashed(
            "strength mu^2 / 4",
            reports.iter().map(|r| (r.mu, strength * r.mu * r.mu / 4.0)).collect(),
        ));
    files.svg("mu_expansion.svg", &plot)?;

    let mut checks = Vec::new();
    if strength > 0.0 {
        for r in reports.iter().filter(|r| r.mu <= MU_RATIO_MAX_MU) {
            checks.push(Check::within(
                &format!("remainder_ratio_mu_{}", r.mu),
                r.ratio.unwrap_or(f64::NAN),
                MU_RATIO_RANGE.0,
                MU_RATIO_RANGE.1,
            ));
        }
        let at_one = reports.iter().find(|r| r.mu == 1.0).map(|r| r.second_term_fraction).unwrap_or(f64::NAN);
        checks.push(Check::at_most("second_term_fraction_at_mu_1", (at_one - 0.5).abs(), 1e-15));
    } else {
        let worst = reports.iter().map(|r| r.remainder).fold(0.0, f64::max);
        checks.push(Check::at_most("remainder_vanishes_without_medium", worst, 0.0));
    }
    let report = json!({
        "strength": strength,
        "config_mu": here.mu,
        "config_second_term_fraction": here.second_term_fraction,
        "config_remainder": here.remainder,
        "rows": reports.iter().map(|r| json!({
            "mu": r.mu, "remainder": r.remainder, "ratio": r.ratio, "second_term_fraction": r.second_term_fraction,
        })).collect::<Vec<_>>(),
    });
    files.json("mu_expansion_report.json", &report)?;
    finish(
        ctx,
        files,
        "expand-mu",
        Some(&p),
        Value::Null,
        json!({ "ratio_range": [MU_RATIO_RANGE.0, MU_RATIO_RANGE.1], "ratio_max_mu": MU_RATIO_MAX_MU }),
        json!({}),
        checks,
        report,
    )
}
