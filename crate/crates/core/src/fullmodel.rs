//! The ε-regularized envelope system before the white-noise limit.
//!
//! Per transverse mode `κ`, with `v = ε ∂u/∂z`:
//!
//! ```text
//! dû/dz = v̂ / ε
//! dv̂/dz = -A v̂ / ε² - B |κ|² û / ε + C η(z) û / ε²
//! A = 2k / (2δk - i),  B = (k / 2π N_F) i / (2δk - i),  C = k² β i / (2δk - i)
//! ```
//!
//! Every mode sees the same `η` because the medium is layered. A step of
//! length `h` applies the exact exponential of the 2×2 generator with `η`
//! frozen at the step midpoint; `η` itself comes from exact OU half-steps.
//! Modes sharing `|κ|²` share a propagator, so the work per step scales with
//! the number of distinct `|κ|²` values rather than with the grid size.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{Space, SpectralField, TransverseGrid};
use crate::noise::{OuPath, OuStepper, OuTransition, StreamId};
use crate::scales::ModelParams;

/// Default fraction of the fast scale used as the step bound.
pub const DEFAULT_C_STAB: f64 = 0.1;

type Mat2 = [[Complex64; 2]; 2];

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Drift coefficients of one transverse mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeCoefficients {
    /// `A = 2k / (2δk - i)`, damping of `v̂`.
    pub damping: Complex64,
    /// `B |κ|²`, diffraction coupling of `û` into `v̂`.
    pub diffraction: Complex64,
    /// `C = k² β i / (2δk - i)`, medium coupling.
    pub coupling: Complex64,
}

fn require_delta(p: &ModelParams) -> Result<()> {
    if p.delta() > 0.0 {
        Ok(())
    } else {
        Err(Error::Unregularized { delta: p.delta() })
    }
}

pub fn mode_coefficients(p: &ModelParams, kappa2: f64) -> Result<ModeCoefficients> {
    require_delta(p)?;
    let k = p.k();
    let den = Complex64::new(2.0 * p.delta() * k, -1.0);
    let i_over = Complex64::i() / den;
    Ok(ModeCoefficients {
        damping: 2.0 * k / den,
        diffraction: i_over * (k / (2.0 * PI * p.fresnel()) * kappa2),
        coupling: i_over * (k * k * p.beta()),
    })
}

impl ModeCoefficients {
    /// Generator of `(û, v̂)` for a frozen medium value `eta`.
    pub fn generator(&self, eps: f64, eta: f64) -> Mat2 {
        let e2 = eps * eps;
        [[ZERO, Complex64::new(1.0 / eps, 0.0)], [-self.diffraction / eps + self.coupling * (eta / e2), -self.damping / e2]]
    }

    /// Largest real part of the eigenvalues of the medium-free generator.
    ///
    /// It is positive for every `κ ≠ 0` and grows like `ε² |κ|⁴` at small
    /// `|κ|`. Once `|κ|²` passes `2π N_F k / ε²` the mode is evanescent and
    /// the rate is of order `|κ| / ε`, so any content there, roundoff
    /// included, is amplified quickly.
    pub fn free_growth_rate(&self, eps: f64) -> f64 {
        let m = self.generator(eps, 0.0);
        let tau = (m[0][0] + m[1][1]) * 0.5;
        let half = (m[0][0] - m[1][1]) * 0.5;
        let d = csqrt(half * half + m[0][1] * m[1][0]);
        (tau + d).re.max((tau - d).re)
    }
}

/// Largest admissible step `c_stab ε² min(l_c, |2δk - i| / 2k)`.
pub fn max_step(p: &ModelParams, c_stab: f64) -> f64 {
    let k = p.k();
    let fast = Complex64::new(2.0 * p.delta() * k, -1.0).norm() / (2.0 * k);
    c_stab * p.eps() * p.eps() * p.l_c().min(fast)
}

/// `exp(t M)` for a 2×2 complex matrix, via
/// `e^{τ} (cosh Δ I + sinh Δ / Δ (N - τ I))` with `N = t M`, `τ = tr N / 2`
/// and `Δ² = ((N00 - N11) / 2)² + N01 N10`.
pub fn expm2(m: &Mat2, t: f64) -> Mat2 {
    let n = [[m[0][0] * t, m[0][1] * t], [m[1][0] * t, m[1][1] * t]];
    let tau = (n[0][0] + n[1][1]) * 0.5;
    let half = (n[0][0] - n[1][1]) * 0.5;
    let d2 = half * half + n[0][1] * n[1][0];
    expm2_parts(cexp(tau), half, n[0][1], n[1][0], d2)
}

/// Assembles the exponential from `e^τ`, the half difference of the diagonal,
/// the off-diagonal entries and `Δ²`. Near `Δ = 0` the hyperbolic factors come
/// from a series, elsewhere from `e^{±Δ}`.
fn expm2_parts(e_tau: Complex64, half: Complex64, n01: Complex64, n10: Complex64, d2: Complex64) -> Mat2 {
    let (ch, sh) = if d2.norm_sqr() < 1e-8 {
        let c = ONE + d2 * (0.5 + d2 * (1.0 / 24.0 + d2 * (1.0 / 720.0)));
        let s = ONE + d2 * (1.0 / 6.0 + d2 * (1.0 / 120.0 + d2 * (1.0 / 5040.0)));
        (e_tau * c, e_tau * s)
    } else {
        let d = csqrt(d2);
        let ed = cexp(d);
        let (ep, em) = (e_tau * ed, e_tau / ed);
        ((ep + em) * 0.5, (ep - em) / (d * 2.0))
    };
    [[ch + sh * half, sh * n01], [sh * n10, ch - sh * half]]
}

fn cexp(z: Complex64) -> Complex64 {
    let r = z.re.exp();
    let (s, c) = z.im.sin_cos();
    Complex64::new(r * c, r * s)
}

/// Principal square root in Cartesian form.
fn csqrt(z: Complex64) -> Complex64 {
    let r = (z.re * z.re + z.im * z.im).sqrt();
    if r == 0.0 {
        return ZERO;
    }
    if z.re >= 0.0 {
        let t = (0.5 * (r + z.re)).sqrt();
        Complex64::new(t, z.im / (2.0 * t))
    } else {
        let t = (0.5 * (r - z.re)).sqrt();
        Complex64::new(z.im.abs() / (2.0 * t), t.copysign(z.im))
    }
}

/// The parts of `exp(h M(η))` for one `|κ|²` class that do not depend on `η`.
/// The medium enters the generator only through `N10`, linearly.
#[derive(Debug, Clone, Copy)]
struct ClassStep {
    e_tau: Complex64,
    half: Complex64,
    n01: Complex64,
    n10: Complex64,
    n10_eta: Complex64,
    d2: Complex64,
    d2_eta: Complex64,
}

impl ClassStep {
    fn new(c: &ModeCoefficients, eps: f64, h: f64) -> Self {
        let n = c.generator(eps, 0.0);
        let n01 = n[0][1] * h;
        let n10 = n[1][0] * h;
        let n10_eta = c.coupling * (h / (eps * eps));
        let tau = n[1][1] * (0.5 * h);
        let half = -tau;
        ClassStep { e_tau: cexp(tau), half, n01, n10, n10_eta, d2: half * half + n01 * n10, d2_eta: n01 * n10_eta }
    }

    fn propagator(&self, eta: f64) -> Mat2 {
        expm2_parts(self.e_tau, self.half, self.n01, self.n10 + self.n10_eta * eta, self.d2 + self.d2_eta * eta)
    }
}

fn mat_vec(m: &Mat2, u: Complex64, v: Complex64) -> (Complex64, Complex64) {
    (m[0][0] * u + m[0][1] * v, m[1][0] * u + m[1][1] * v)
}

/// Initial value of `v̂ = ε ∂û/∂z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitialSlope {
    /// `v̂(0) = 0`.
    #[default]
    Zero,
    /// `v̂(0) = ε (-i |κ|² / 4π N_F) û(0)`, the slope of free paraxial propagation.
    Paraxial,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FullState {
    pub u_hat: SpectralField,
    pub v_hat: SpectralField,
    pub z: f64,
    pub eta: f64,
    /// Running value of the Wiener process consistent with `eta`.
    pub wiener: f64,
}

impl FullState {
    pub fn new(u0: &SpectralField, p: &ModelParams, eta: f64, slope: InitialSlope) -> Result<Self> {
        let u_hat = u0.clone().into_space(Space::Spectral)?;
        let mut v_hat = SpectralField::zeros(u_hat.grid().clone(), Space::Spectral);
        if slope == InitialSlope::Paraxial {
            let c = p.eps() * p.diffraction();
            for ((v, u), k2) in v_hat.data_mut().iter_mut().zip(u_hat.data()).zip(u_hat.grid().kappa2()) {
                *v = u * Complex64::new(0.0, -c * k2);
            }
        }
        Ok(FullState { u_hat, v_hat, z: 0.0, eta, wiener: 0.0 })
    }
}

/// Per-grid solver holding the `|κ|²` classes and their coefficients.
#[derive(Debug, Clone)]
pub struct FullSolver {
    params: ModelParams,
    grid: Arc<TransverseGrid>,
    c_stab: f64,
    class_of: Vec<u32>,
    coefficients: Vec<ModeCoefficients>,
    scratch: Vec<Mat2>,
    /// Step size `steps` was built for.
    step_h: f64,
    steps: Vec<ClassStep>,
}

impl FullSolver {
    pub fn new(p: &ModelParams, grid: Arc<TransverseGrid>) -> Result<Self> {
        Self::with_stability(p, grid, DEFAULT_C_STAB)
    }

    pub fn with_stability(p: &ModelParams, grid: Arc<TransverseGrid>, c_stab: f64) -> Result<Self> {
        require_delta(p)?;
        crate::error::positive("c_stab", c_stab)?;
        let kappa2 = grid.kappa2();
        let mut distinct: Vec<f64> = kappa2.to_vec();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        let class_of = kappa2
            .iter()
            .map(|k2| distinct.binary_search_by(|d| d.total_cmp(k2)).expect("class present") as u32)
            .collect();
        let coefficients = distinct.iter().map(|&k2| mode_coefficients(p, k2)).collect::<Result<Vec<_>>>()?;
        let scratch = vec![[[ZERO; 2]; 2]; coefficients.len()];
        Ok(FullSolver { params: *p, grid, c_stab, class_of, coefficients, scratch, step_h: f64::NAN, steps: Vec::new() })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn grid(&self) -> &Arc<TransverseGrid> {
        &self.grid
    }

    /// Number of distinct `|κ|²` values on the grid.
    pub fn n_classes(&self) -> usize {
        self.coefficients.len()
    }

    pub fn max_step(&self) -> f64 {
        max_step(&self.params, self.c_stab)
    }

    /// Largest free growth rate over the grid's modes.
    pub fn max_free_growth_rate(&self) -> f64 {
        let eps = self.params.eps();
        self.coefficients.iter().map(|c| c.free_growth_rate(eps)).fold(0.0, f64::max)
    }

    fn check_step(&self, h: f64) -> Result<()> {
        let bound = self.max_step();
        if !(h > 0.0) || h > bound * (1.0 + 1e-12) {
            return Err(Error::StepTooLarge { dz: h, bound });
        }
        Ok(())
    }

    fn check_state(&self, state: &FullState) -> Result<()> {
        state.u_hat.expect_space(Space::Spectral)?;
        state.v_hat.expect_space(Space::Spectral)?;
        for f in [&state.u_hat, &state.v_hat] {
            if f.data().len() != self.class_of.len() {
                return Err(Error::Shape { expected: self.class_of.len(), found: f.data().len() });
            }
        }
        Ok(())
    }

    fn build_propagators(&mut self, h: f64, eta_mid: f64) {
        if h != self.step_h {
            let eps = self.params.eps();
            self.steps = self.coefficients.iter().map(|c| ClassStep::new(c, eps, h)).collect();
            self.step_h = h;
        }
        for (prop, s) in self.scratch.iter_mut().zip(&self.steps) {
            *prop = s.propagator(eta_mid);
        }
    }

    fn apply_propagators(&self, state: &mut FullState) {
        let (u, v) = (state.u_hat.data_mut(), state.v_hat.data_mut());
        for ((uu, vv), &c) in u.iter_mut().zip(v.iter_mut()).zip(&self.class_of) {
            let (a, b) = mat_vec(&self.scratch[c as usize], *uu, *vv);
            *uu = a;
            *vv = b;
        }
    }

    /// Advances `(û, v̂)` by `h` with the medium frozen at `eta_mid`. The
    /// medium fields of `state` are left to the caller.
    pub fn step_frozen(&mut self, state: &mut FullState, h: f64, eta_mid: f64) -> Result<()> {
        self.check_step(h)?;
        self.check_state(state)?;
        self.build_propagators(h, eta_mid);
        self.apply_propagators(state);
        state.z += h;
        Ok(())
    }

    /// One step over a medium segment sampled at `z`, `z + h/2` and `z + h`
    /// (an [`OuPath`] of two half steps starting at `state.eta`).
    pub fn step_full(&mut self, state: &mut FullState, segment: &OuPath) -> Result<()> {
        if segment.n_steps() != 2 {
            return Err(Error::Shape { expected: 2, found: segment.n_steps() });
        }
        if segment.values[0] != state.eta {
            return Err(Error::Domain {
                name: "segment start",
                value: segment.values[0],
                expected: "the current medium value of the state",
            });
        }
        self.step_frozen(state, 2.0 * segment.z_step, segment.values[1])?;
        state.eta = segment.values[2];
        state.wiener += segment.w_increments[0] + segment.w_increments[1];
        Ok(())
    }

    /// Integrates one path to `z_end`, recording a snapshot at every entry of
    /// `snapshot_zs` (strictly increasing, within `[0, z_end]`) and at `z_end`.
    /// Each gap between snapshots is split into the fewest equal steps that
    /// respect the stability bound.
    pub fn solve(
        &mut self,
        u0: &SpectralField,
        z_end: f64,
        seed: StreamId,
        snapshot_zs: &[f64],
        slope: InitialSlope,
    ) -> Result<FullTrajectory> {
        crate::error::positive("z_end", z_end)?;
        let targets = snapshot_targets(snapshot_zs, z_end)?;
        let mut ou = OuStepper::new(seed);
        let mut state = FullState::new(u0, &self.params, ou.eta(), slope)?;
        self.check_state(&state)?;
        let eta0 = state.eta;
        let beta_zero = self.params.beta() == 0.0;
        let mut snapshots = Vec::with_capacity(targets.len());
        for &target in &targets {
            let gap = target - state.z;
            if gap > 0.0 {
                let n = (gap / self.max_step()).ceil().max(1.0) as usize;
                let h = gap / n as f64;
                self.check_step(h)?;
                let half = OuTransition::new(&self.params, 0.5 * h)?;
                if beta_zero {
                    self.build_propagators(h, 0.0);
                }
                for _ in 0..n {
                    ou.step(&half);
                    let eta_mid = ou.eta();
                    ou.step(&half);
                    if !beta_zero {
                        self.build_propagators(h, eta_mid);
                    }
                    self.apply_propagators(&mut state);
                }
            }
            state.z = target;
            state.eta = ou.eta();
            state.wiener = ou.wiener();
            snapshots.push(state.clone());
        }
        Ok(FullTrajectory { eta0, snapshots })
    }
}

fn snapshot_targets(snapshot_zs: &[f64], z_end: f64) -> Result<Vec<f64>> {
    if snapshot_zs.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Ordering { name: "snapshot positions" });
    }
    if let Some(&z) = snapshot_zs.iter().find(|&&z| !(0.0..=z_end).contains(&z)) {
        return Err(Error::Domain { name: "snapshot z", value: z, expected: "0 <= z <= z_end" });
    }
    let mut t = snapshot_zs.to_vec();
    if t.last() != Some(&z_end) {
        t.push(z_end);
    }
    Ok(t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FullTrajectory {
    /// Medium value at `z = 0`.
    pub eta0: f64,
    pub snapshots: Vec<FullState>,
}

/// Convenience wrapper building a solver for `u0`'s grid.
pub fn solve_full(
    u0: &SpectralField,
    p: &ModelParams,
    z_end: f64,
    seed: StreamId,
    snapshot_zs: &[f64],
    slope: InitialSlope,
) -> Result<FullTrajectory> {
    FullSolver::new(p, u0.grid().clone())?.solve(u0, z_end, seed, snapshot_zs, slope)
}

/// Exact free propagation of the regularized system with `β = 0`:
/// `(û, v̂)(z) = exp(z M_κ) (û, v̂)(0)` per mode.
pub fn regularized_free_propagation(u0: &SpectralField, p: &ModelParams, z: f64, slope: InitialSlope) -> Result<FullState> {
    crate::error::nonnegative("z", z)?;
    let p0 = p.with_beta(0.0)?;
    let mut state = FullState::new(u0, &p0, 0.0, slope)?;
    let eps = p0.eps();
    let kappa2: Vec<f64> = state.u_hat.grid().kappa2().to_vec();
    let (u, v) = (state.u_hat.data_mut(), state.v_hat.data_mut());
    for ((uu, vv), k2) in u.iter_mut().zip(v.iter_mut()).zip(kappa2) {
        let m = expm2(&mode_coefficients(&p0, k2)?.generator(eps, 0.0), z);
        let (a, b) = mat_vec(&m, *uu, *vv);
        *uu = a;
        *vv = b;
    }
    state.z = z;
    Ok(state)
}
