//! Ensemble statistics, coherent-field decay, the `μ` expansion of the drift
//! and the full-versus-limiting convergence study.

use alloc::vec::Vec;

use num_complex::Complex64;

use crate::ensemble::{control_mean, full_ensemble, FullEnsembleSpec, PathExecutor};
use crate::error::{Error, Result};
use crate::exact::ExactSum;
use crate::fullmodel::{regularized_free_propagation, solve_full, InitialSlope, DEFAULT_C_STAB};
use crate::grid::{Space, SpectralField};
use crate::noise::StreamId;
use crate::scales::ModelParams;
use crate::spde::{coherent_field, scaled_free_solution, second_moment, spde_coefficients};

/// Running sums of `u` and `|u|²` per grid point over a contiguous range of
/// path indices.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    first_path: u64,
    count: u64,
    re: Vec<ExactSum>,
    im: Vec<ExactSum>,
    sq: Vec<ExactSum>,
}

impl EnsembleStats {
    /// Empty accumulator whose first path will be `first_path`.
    pub fn new(first_path: u64, len: usize) -> Self {
        EnsembleStats {
            first_path,
            count: 0,
            re: alloc::vec![ExactSum::new(); len],
            im: alloc::vec![ExactSum::new(); len],
            sq: alloc::vec![ExactSum::new(); len],
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    /// Index of the first path not yet accumulated.
    pub fn next_path(&self) -> u64 {
        self.first_path + self.count
    }

    pub fn push(&mut self, path_index: u64, data: &[Complex64]) -> Result<()> {
        if path_index != self.next_path() {
            return Err(Error::NonContiguous { expected: self.next_path(), found: path_index });
        }
        if data.len() != self.len() {
            return Err(Error::Shape { expected: self.len(), found: data.len() });
        }
        for (j, v) in data.iter().enumerate() {
            self.re[j].add(v.re);
            self.im[j].add(v.im);
            self.sq[j].add(v.norm_sqr());
        }
        self.count += 1;
        Ok(())
    }

    /// Appends the paths of `other`, which must start where `self` ends. An
    /// empty `self` adopts `other`'s starting index.
    pub fn merge(&mut self, other: &EnsembleStats) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Shape { expected: self.len(), found: other.len() });
        }
        if self.count == 0 {
            self.first_path = other.first_path;
        } else if other.count > 0 && other.first_path != self.next_path() {
            return Err(Error::NonContiguous { expected: self.next_path(), found: other.first_path });
        }
        for j in 0..self.len() {
            self.re[j].merge(&other.re[j]);
            self.im[j].merge(&other.im[j]);
            self.sq[j].merge(&other.sq[j]);
        }
        self.count += other.count;
        Ok(())
    }

    pub fn mean(&self) -> Vec<Complex64> {
        let n = self.count as f64;
        self.re.iter().zip(&self.im).map(|(r, i)| Complex64::new(r.to_f64() / n, i.to_f64() / n)).collect()
    }

    pub fn second_moment(&self) -> Vec<f64> {
        let n = self.count as f64;
        self.sq.iter().map(|s| s.to_f64() / n).collect()
    }

    /// Standard error of the complex mean, `sqrt((E|u|² - |E u|²) / (N - 1))`
    /// with the unbiased variance.
    pub fn mean_stderr(&self) -> Vec<f64> {
        let n = self.count as f64;
        if self.count < 2 {
            return alloc::vec![f64::INFINITY; self.len()];
        }
        self.mean()
            .iter()
            .zip(self.second_moment())
            .map(|(m, s)| ((s - m.norm_sqr()).max(0.0) * n / (n - 1.0) / n).sqrt())
            .collect()
    }
}

/// `Λ = k²β²l_c / (8 (1 + 1/(4k²l_c²)))`, the decay rate of `|E u|`.
pub fn decay_constant_theory(p: &ModelParams) -> f64 {
    let (k, beta, l_c) = (p.k(), p.beta(), p.l_c());
    k * k * beta * beta * l_c / (8.0 * (1.0 + 1.0 / (4.0 * k * k * l_c * l_c)))
}

/// One point of a decay fit: the ensemble mean at the probe, its standard
/// error and the free-propagation reference at the same point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecaySample {
    pub z: f64,
    pub mean: Complex64,
    pub stderr: f64,
    pub free: Complex64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayReport {
    pub lambda_fit: f64,
    pub lambda_theory: f64,
    pub stderr: f64,
    pub z_window: (f64, f64),
    pub n_points: usize,
}

impl DecayReport {
    pub fn relative_error(&self) -> f64 {
        (self.lambda_fit - self.lambda_theory).abs() / self.lambda_theory.abs()
    }
}

pub const MIN_DECAY_SNAPSHOTS: usize = 5;
/// `|E u|` must exceed this many standard errors to enter a fit.
pub const NOISE_FLOOR_SIGMAS: f64 = 3.0;

/// Floor on the uncertainty of a log-modulus, covering transform roundoff.
pub const LOG_MODULUS_FLOOR: f64 = 64.0 * f64::EPSILON;

/// Fits `log|E u(z, x0)| - log|S(z) u0 (x0)| = -Λ z`.
///
/// The line passes through the origin since both sides agree at `z = 0`.
/// Each point carries the log-modulus uncertainty `SE / |E u|`, floored at
/// [`LOG_MODULUS_FLOOR`], and is weighted by its inverse square. The
/// reported standard error is the one implied by those uncertainties.
pub fn fit_decay(samples: &[DecaySample], lambda_theory: f64) -> Result<DecayReport> {
    if samples.len() < MIN_DECAY_SNAPSHOTS {
        return Err(Error::TooFewSnapshots { found: samples.len(), needed: MIN_DECAY_SNAPSHOTS });
    }
    if samples.windows(2).any(|w| !(w[0].z < w[1].z)) {
        return Err(Error::Ordering { name: "decay snapshot positions" });
    }
    for (index, s) in samples.iter().enumerate() {
        let modulus = s.mean.norm();
        let floor = NOISE_FLOOR_SIGMAS * s.stderr;
        if !(modulus > floor) || !modulus.is_finite() || !(s.free.norm() > 0.0) {
            return Err(Error::BelowNoiseFloor { index, z: s.z, modulus, floor });
        }
    }
    let points: Vec<(f64, f64, f64)> = samples
        .iter()
        .filter(|s| s.z != 0.0)
        .map(|s| {
            let y = s.mean.norm().ln() - s.free.norm().ln();
            let sigma = (s.stderr / s.mean.norm()).max(LOG_MODULUS_FLOOR);
            (s.z, y, 1.0 / (sigma * sigma))
        })
        .collect();
    let szz: f64 = points.iter().map(|(z, _, w)| w * z * z).sum();
    let szy: f64 = points.iter().map(|(z, y, w)| w * z * y).sum();
    let lambda_fit = -szy / szz;
    let stderr = (1.0 / szz).sqrt();
    Ok(DecayReport {
        lambda_fit,
        lambda_theory,
        stderr,
        z_window: (samples[0].z, samples[samples.len() - 1].z),
        n_points: samples.len(),
    })
}

/// Builds decay samples at grid index `probe` from physical-space ensemble
/// snapshots of a run started from `u0`.
pub fn decay_samples(
    zs: &[f64],
    stats: &[EnsembleStats],
    u0: &SpectralField,
    diffraction: f64,
    probe: usize,
) -> Result<Vec<DecaySample>> {
    if zs.len() != stats.len() {
        return Err(Error::Shape { expected: zs.len(), found: stats.len() });
    }
    zs.iter()
        .zip(stats)
        .map(|(&z, s)| {
            let free = scaled_free_solution(u0, z, diffraction, Complex64::new(1.0, 0.0))?.into_space(Space::Physical)?;
            Ok(DecaySample { z, mean: s.mean()[probe], stderr: s.mean_stderr()[probe], free: free.data()[probe] })
        })
        .collect()
}

/// Second-order remainder check of `-S / (1 - iμ/2) ≈ -S - iμS/2`,
/// `S = k²β²l_c / 8`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuExpansionReport {
    pub mu: f64,
    pub full: Complex64,
    pub two_term: Complex64,
    pub remainder: f64,
    pub remainder_half: f64,
    /// `remainder(μ) / remainder(μ/2)`; `None` when both vanish.
    pub ratio: Option<f64>,
    /// `|second term| / |first term| = μ / 2`.
    pub second_term_fraction: f64,
}

pub fn mu_expansion_at(strength: f64, mu: f64) -> MuExpansionReport {
    let coefficient = |m: f64| -strength / Complex64::new(1.0, -0.5 * m);
    let two_term = |m: f64| Complex64::new(-strength, -0.5 * m * strength);
    let remainder = (coefficient(mu) - two_term(mu)).norm();
    let remainder_half = (coefficient(0.5 * mu) - two_term(0.5 * mu)).norm();
    MuExpansionReport {
        mu,
        full: coefficient(mu),
        two_term: two_term(mu),
        remainder,
        remainder_half,
        ratio: if remainder_half > 0.0 { Some(remainder / remainder_half) } else { None },
        second_term_fraction: if strength > 0.0 { 0.5 * mu } else { 0.0 },
    }
}

pub fn mu_expansion_check(p: &ModelParams) -> MuExpansionReport {
    mu_expansion_at(p.k() * p.k() * p.beta() * p.beta() * p.l_c() / 8.0, p.mu())
}

/// Whether the paths of each `ε` reuse the same Wiener streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedMode {
    /// Path `i` uses stream `(master_seed, i)` for every `ε`.
    Shared,
    /// Each `ε` gets its own master seed, derived from its position in the list.
    Independent,
}

impl SeedMode {
    pub fn master_for(&self, master_seed: u64, eps_index: usize) -> u64 {
        match self {
            SeedMode::Shared => master_seed,
            SeedMode::Independent => master_seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(eps_index as u64 + 1)),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            SeedMode::Shared => "shared",
            SeedMode::Independent => "independent",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceConfig {
    /// Template parameters; `eps` is replaced by each entry of `eps_list`.
    pub params: ModelParams,
    pub eps_list: Vec<f64>,
    pub z_end: f64,
    pub n_paths: u64,
    pub master_seed: u64,
    pub seed_mode: SeedMode,
    pub slope: InitialSlope,
    pub c_stab: f64,
}

impl ConvergenceConfig {
    pub fn new(params: ModelParams, eps_list: Vec<f64>, z_end: f64, n_paths: u64, master_seed: u64) -> Self {
        ConvergenceConfig {
            params,
            eps_list,
            z_end,
            n_paths,
            master_seed,
            seed_mode: SeedMode::Shared,
            slope: InitialSlope::Zero,
            c_stab: DEFAULT_C_STAB,
        }
    }
}

/// Errors at `z_end` for one `ε`. Field errors are relative L² norms over the
/// grid against the limiting model at the same `δ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub eps: f64,
    /// Control-variate estimate of `E u` against the coherent field.
    pub mean_error: f64,
    /// Monte-Carlo standard error of that estimate, same normalization.
    pub mean_stderr: f64,
    /// Plain ensemble mean against the coherent field.
    pub raw_mean_error: f64,
    pub raw_mean_stderr: f64,
    /// `E|u|²` against the limiting second moment.
    pub second_moment_error: f64,
    /// Control-variate estimate at the beam center, relative to `|U|` there.
    pub probe_error: f64,
    /// Mean over paths of `‖u - m' S u0‖ / ‖m' S u0‖`.
    pub pathwise_error: f64,
    pub pathwise_stderr: f64,
    /// `β = 0` run against the limiting coherent field (free paraxial propagation).
    pub beta0_error: f64,
    /// `β = 0` run against exact regularized free propagation.
    pub beta0_regularized_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTable {
    pub seed_mode: SeedMode,
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceTable {
    pub fn mean_error_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].mean_error < w[0].mean_error)
    }

    pub fn raw_mean_error_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].raw_mean_error < w[0].raw_mean_error)
    }

    pub fn beta0_max_error(&self) -> f64 {
        self.rows.iter().map(|r| r.beta0_error).fold(0.0, f64::max)
    }

    pub fn beta0_max_regularized_error(&self) -> f64 {
        self.rows.iter().map(|r| r.beta0_regularized_error).fold(0.0, f64::max)
    }
}

fn l2(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

fn field_error(est: &[Complex64], reference: &[Complex64]) -> f64 {
    l2(est.iter().zip(reference).map(|(a, b)| (a - b).norm())) / l2(reference.iter().map(|b| b.norm()))
}

pub fn convergence_study<X: PathExecutor>(
    exec: &X,
    u0: &SpectralField,
    cfg: &ConvergenceConfig,
) -> Result<ConvergenceTable> {
    if cfg.eps_list.is_empty() || cfg.eps_list.windows(2).any(|w| !(w[0] > w[1])) {
        return Err(Error::Ordering { name: "eps list (strictly decreasing)" });
    }
    if cfg.n_paths < 2 {
        return Err(Error::Domain { name: "n_paths", value: cfg.n_paths as f64, expected: "at least 2 paths" });
    }
    let u0 = u0.clone().into_space(Space::Physical)?;
    let probe = u0.grid().origin();
    let mut rows = Vec::with_capacity(cfg.eps_list.len());
    for (index, &eps) in cfg.eps_list.iter().enumerate() {
        let p = cfg.params.with_eps(eps)?;
        let coeff = spde_coefficients(&p);
        let coherent = coherent_field(&u0, cfg.z_end, &coeff)?;
        let second = second_moment(&u0, cfg.z_end, &coeff)?;
        let free = scaled_free_solution(&u0, cfg.z_end, coeff.diffraction, Complex64::new(1.0, 0.0))?;

        let mut spec = FullEnsembleSpec::new(cfg.z_end, cfg.n_paths, cfg.seed_mode.master_for(cfg.master_seed, index));
        spec.slope = cfg.slope;
        spec.c_stab = cfg.c_stab;
        let ens = full_ensemble(exec, &u0, &p, &spec)?;
        let (fields, residuals, pathwise) = (&ens.fields[0], &ens.residuals[0], &ens.pathwise[0]);

        let m_mean = control_mean(&p, cfg.z_end);
        let cv: Vec<Complex64> = residuals.mean().iter().zip(free.data()).map(|(r, s)| r + m_mean * s).collect();
        let raw = fields.mean();
        let norm_u = l2(coherent.data().iter().map(|v| v.norm()));
        let moment = fields.second_moment();

        // β = 0: every path coincides, so one path gives the ensemble mean
        let p0 = p.with_beta(0.0)?;
        let b0 = solve_full(&u0, &p0, cfg.z_end, StreamId::new(cfg.master_seed, 0), &[], cfg.slope)?;
        let b0_field = b0.snapshots[0].u_hat.to_physical()?;
        let reg = regularized_free_propagation(&u0, &p0, cfg.z_end, cfg.slope)?.u_hat.into_physical()?;

        rows.push(ConvergenceRow {
            eps,
            mean_error: field_error(&cv, coherent.data()),
            mean_stderr: l2(residuals.mean_stderr().into_iter()) / norm_u,
            raw_mean_error: field_error(&raw, coherent.data()),
            raw_mean_stderr: l2(fields.mean_stderr().into_iter()) / norm_u,
            second_moment_error: l2(moment.iter().zip(&second).map(|(a, b)| a - b)) / l2(second.iter().copied()),
            probe_error: (cv[probe] - coherent.data()[probe]).norm() / coherent.data()[probe].norm(),
            pathwise_error: pathwise.mean()[0].re,
            pathwise_stderr: pathwise.mean_stderr()[0],
            beta0_error: field_error(b0_field.data(), free.data()),
            beta0_regularized_error: field_error(b0_field.data(), reg.data()),
        });
    }
    Ok(ConvergenceTable { seed_mode: cfg.seed_mode, rows })
}
