//! Stationary Ornstein-Uhlenbeck medium paths and their driving Wiener process.
//!
//! The medium fluctuation `η` solves
//!
//! ```text
//! dη = -η / (ε² l_c) dz + 1 / (ε sqrt(l_c)) dW
//! ```
//!
//! and is sampled with its exact Gaussian transition law, so the generated
//! statistics carry no step-size bias. The increments of `W` over each step are
//! drawn from their exact conditional law given the `η` innovation: the full
//! model (driven by `η`) and the limiting equation (driven by `W`) can share
//! one noise source.

use alloc::vec::Vec;

use rand_chacha::ChaCha12Rng;
use rand_core::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{positive, Result};
use crate::scales::ModelParams;

/// Identifies one reproducible random stream: the ChaCha key is derived from
/// `master_seed` and the stream number is `path_index`, so path `i` draws the
/// same numbers no matter which worker generates it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamId {
    pub master_seed: u64,
    pub path_index: u64,
}

impl StreamId {
    pub fn new(master_seed: u64, path_index: u64) -> Self {
        StreamId { master_seed, path_index }
    }

    pub fn rng(&self) -> ChaCha12Rng {
        let mut rng = ChaCha12Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.path_index);
        rng
    }
}

pub(crate) fn normal(rng: &mut ChaCha12Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// `x - 2 tanh(x / 2)` without cancellation for small `x`.
fn x_minus_2tanh_half(x: f64) -> f64 {
    if x < 1e-2 {
        let x2 = x * x;
        x * x2 * (1.0 / 12.0 - x2 * (1.0 / 120.0 - x2 * (17.0 / 20160.0)))
    } else {
        x - 2.0 * (0.5 * x).tanh()
    }
}

/// Exact one-step law of `(η_{n+1}, ΔW_n)` given `η_n` for a fixed step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuTransition {
    pub z_step: f64,
    /// `a = exp(-Δz / (ε² l_c))`.
    pub decay: f64,
    /// `s = sqrt((1 - a²) / 2)`, the innovation standard deviation.
    pub innovation: f64,
    /// Loading of `ΔW` on the innovation draw `ξ`.
    pub w_on_innovation: f64,
    /// Standard deviation of `ΔW` given `ξ`.
    pub w_residual: f64,
}

impl OuTransition {
    pub fn new(p: &ModelParams, z_step: f64) -> Result<Self> {
        positive("z_step", z_step)?;
        let theta = 1.0 / p.correlation_z();
        let x = theta * z_step;
        let decay = (-x).exp();
        // 1 - a and 1 - a² without cancellation
        let one_minus_a = -(-x).exp_m1();
        let one_minus_a2 = -(-2.0 * x).exp_m1();
        let innovation = (0.5 * one_minus_a2).sqrt();
        // I = ∫ e^{-θ(Δz-s)} dW_s: Var I = (1-a²)/(2θ), Cov(I, ΔW) = (1-a)/θ
        let var_i = one_minus_a2 / (2.0 * theta);
        let cov = one_minus_a / theta;
        let w_on_innovation = if var_i > 0.0 { cov / var_i.sqrt() } else { 0.0 };
        let w_residual = (x_minus_2tanh_half(x) / theta).max(0.0).sqrt();
        Ok(OuTransition { z_step, decay, innovation, w_on_innovation, w_residual })
    }

    /// Advances `eta` by one step and returns the matching Wiener increment.
    #[inline]
    pub fn advance(&self, eta: &mut f64, rng: &mut ChaCha12Rng) -> f64 {
        let xi = normal(rng);
        let zeta = normal(rng);
        *eta = self.decay * *eta + self.innovation * xi;
        self.w_on_innovation * xi + self.w_residual * zeta
    }
}

/// Streaming sampler of a stationary OU path; used by the solvers so that no
/// path needs to be stored.
#[derive(Debug, Clone)]
pub struct OuStepper {
    rng: ChaCha12Rng,
    eta: f64,
    wiener: f64,
}

impl OuStepper {
    /// Starts a stationary path: `η_0 ~ N(0, 1/2)`, `W_0 = 0`.
    pub fn new(seed: StreamId) -> Self {
        let mut rng = seed.rng();
        let eta = normal(&mut rng) * core::f64::consts::FRAC_1_SQRT_2;
        OuStepper { rng, eta, wiener: 0.0 }
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Running value of the consistent Wiener process.
    pub fn wiener(&self) -> f64 {
        self.wiener
    }

    /// Advances by one transition and returns the Wiener increment.
    pub fn step(&mut self, t: &OuTransition) -> f64 {
        let dw = t.advance(&mut self.eta, &mut self.rng);
        self.wiener += dw;
        dw
    }
}

/// A sampled medium path on `z_n = n Δz`.
#[derive(Debug, Clone, PartialEq)]
pub struct OuPath {
    pub z_step: f64,
    /// `η(z_n)` for `n = 0..=n_steps`.
    pub values: Vec<f64>,
    /// `W(z_{n+1}) - W(z_n)` for `n = 0..n_steps`.
    pub w_increments: Vec<f64>,
    pub seed: StreamId,
}

impl OuPath {
    pub fn n_steps(&self) -> usize {
        self.w_increments.len()
    }

    /// `W(z_n)` with `W(0) = 0`.
    pub fn wiener_values(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.values.len());
        let mut w = 0.0;
        out.push(w);
        for dw in &self.w_increments {
            w += dw;
            out.push(w);
        }
        out
    }
}

/// Samples `n_steps` exact OU transitions. `n_steps = 0` gives a path holding
/// only the stationary initial value.
pub fn sample_ou_path(p: &ModelParams, n_steps: usize, z_step: f64, seed: StreamId) -> Result<OuPath> {
    let t = OuTransition::new(p, z_step)?;
    let mut stepper = OuStepper::new(seed);
    let mut values = Vec::with_capacity(n_steps + 1);
    let mut w_increments = Vec::with_capacity(n_steps);
    values.push(stepper.eta());
    for _ in 0..n_steps {
        w_increments.push(stepper.step(&t));
        values.push(stepper.eta());
    }
    Ok(OuPath { z_step, values, w_increments, seed })
}

/// Theoretical autocovariance `(1/2) exp(-lag / (ε² l_c))`.
pub fn ou_autocovariance_theory(lag: f64, p: &ModelParams) -> f64 {
    0.5 * (-lag.abs() / p.correlation_z()).exp()
}

/// Independent `N(0, z_step)` increments.
pub fn sample_wiener_path(n_steps: usize, z_step: f64, seed: StreamId) -> Result<Vec<f64>> {
    positive("z_step", z_step)?;
    let mut rng = seed.rng();
    let sd = z_step.sqrt();
    Ok((0..n_steps).map(|_| sd * normal(&mut rng)).collect())
}

/// Sample autocovariance at one lag, using the known zero mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LagEstimate {
    pub lag_steps: usize,
    pub lag: f64,
    pub estimate: f64,
    pub theory: f64,
    pub stderr: f64,
}

impl LagEstimate {
    pub fn z_score(&self) -> f64 {
        (self.estimate - self.theory) / self.stderr
    }
}

/// Sample autocovariances `(1/(N-m)) Σ η_n η_{n+m}` for `m = 0..=max_lag`.
pub fn sample_autocovariance(values: &[f64], max_lag: usize) -> Vec<f64> {
    (0..=max_lag.min(values.len().saturating_sub(1)))
        .map(|m| {
            let n = values.len() - m;
            let s: f64 = values[..n].iter().zip(&values[m..]).map(|(a, b)| a * b).sum();
            s / n as f64
        })
        .collect()
}

/// Large-sample standard error of the lag-`m` sample autocovariance of an
/// AR(1) sequence with coefficient `a` and variance `var`, from Bartlett's
/// formula `Var ≈ (1/N) Σ_j [γ_j² + γ_{j+m} γ_{j-m}]`.
pub fn ar1_autocovariance_stderr(a: f64, var: f64, lag: usize, n: usize) -> f64 {
    let a2 = a * a;
    let m = lag as i32;
    let sum_sq = (1.0 + a2) / (1.0 - a2);
    let a2m = a2.powi(m);
    let cross = (2 * m + 1) as f64 * a2m + 2.0 * a2m * a2 / (1.0 - a2);
    (var * var * (sum_sq + cross) / n as f64).sqrt()
}

/// Compares the lag autocovariances of `path` with theory up to `max_lag` steps.
pub fn autocovariance_check(path: &OuPath, p: &ModelParams, max_lag: usize) -> Vec<LagEstimate> {
    let a = (-path.z_step / p.correlation_z()).exp();
    sample_autocovariance(&path.values, max_lag)
        .into_iter()
        .enumerate()
        .map(|(m, estimate)| {
            let lag = m as f64 * path.z_step;
            LagEstimate {
                lag_steps: m,
                lag,
                estimate,
                theory: ou_autocovariance_theory(lag, p),
                stderr: ar1_autocovariance_stderr(a, 0.5, m, path.values.len() - m),
            }
        })
        .collect()
}
