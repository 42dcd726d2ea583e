//! The limiting Itô equation
//!
//! ```text
//! du = i/(4π N_F) Δu dz + c(δ) u dz + i g u dW,
//! c(δ) = -k²β²l_c / (8 (1 + (δ - i/(2k)) / l_c)),   g = kβ sqrt(l_c) / 2
//! ```
//!
//! The noise multiplies `u` by a scalar that does not depend on `x`, so it
//! commutes with diffraction and one step is exact both in law and pathwise:
//! free propagation of every mode times `exp((c + g²/2) dz + i g dW)`. The
//! `+g²/2` is the Itô correction; a Stratonovich reading would drop it.

use alloc::vec::Vec;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{Space, SpectralField};
use crate::scales::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpdeCoefficients {
    /// Deterministic drift `c(δ)`.
    pub drift: Complex64,
    /// Real noise amplitude `g`.
    pub noise: f64,
    /// Diffraction coefficient `1 / (4π N_F)`.
    pub diffraction: f64,
}

pub fn spde_coefficients(p: &ModelParams) -> SpdeCoefficients {
    let (k, beta, l_c) = (p.k(), p.beta(), p.l_c());
    let strength = k * k * beta * beta * l_c / 8.0;
    let denom = Complex64::new(1.0 + p.delta() / l_c, -1.0 / (2.0 * k * l_c));
    SpdeCoefficients {
        drift: -strength / denom,
        noise: k * beta * l_c.sqrt() / 2.0,
        diffraction: p.diffraction(),
    }
}

impl SpdeCoefficients {
    /// Pathwise growth rate `Re c + g²/2` of the L² norm.
    pub fn norm_growth_rate(&self) -> f64 {
        self.drift.re + 0.5 * self.noise * self.noise
    }

    /// Scalar multiplier `exp((c + g²/2) dz + i g dW)`.
    pub fn multiplier(&self, dz: f64, dw: f64) -> Complex64 {
        let ito = Complex64::new(0.5 * self.noise * self.noise, 0.0);
        ((self.drift + ito) * dz + Complex64::new(0.0, self.noise * dw)).exp()
    }

    /// `E[multiplier]` after propagating a distance `z`: `exp(c z)`.
    pub fn mean_multiplier(&self, z: f64) -> Complex64 {
        (self.drift * z).exp()
    }
}

/// Per-mode free propagator `e^{-i diffr |κ|² dz}` for a fixed step.
#[derive(Debug, Clone)]
pub struct FreePropagator {
    phases: Vec<Complex64>,
}

impl FreePropagator {
    pub fn new(kappa2: &[f64], diffraction: f64, dz: f64) -> Self {
        let phases = kappa2.iter().map(|k2| Complex64::from_polar(1.0, -diffraction * k2 * dz)).collect();
        FreePropagator { phases }
    }

    pub fn apply(&self, f: &mut SpectralField, scalar: Complex64) -> Result<()> {
        f.expect_space(Space::Spectral)?;
        if f.data().len() != self.phases.len() {
            return Err(Error::Shape { expected: self.phases.len(), found: f.data().len() });
        }
        f.data_mut().iter_mut().zip(&self.phases).for_each(|(v, ph)| *v *= ph * scalar);
        Ok(())
    }
}

/// Exact free paraxial propagation over `z` (spectral input).
pub fn free_propagate(f: &mut SpectralField, diffraction: f64, z: f64) -> Result<()> {
    let prop = FreePropagator::new(f.grid().kappa2(), diffraction, z);
    prop.apply(f, Complex64::new(1.0, 0.0))
}

/// One exact step of the limiting equation.
pub fn spde_step(f: &mut SpectralField, dw: f64, dz: f64, coeff: &SpdeCoefficients) -> Result<()> {
    f.expect_space(Space::Spectral)?;
    let prop = FreePropagator::new(f.grid().kappa2(), coeff.diffraction, dz);
    prop.apply(f, coeff.multiplier(dz, dw))
}

/// Pathwise solution `exp((c + g²/2) z + i g W(z)) S(z) u0`, where `W(z)` is
/// the sum of `w_increments`. The result is in the same space as `u0`.
pub fn closed_form_solution(
    u0: &SpectralField,
    w_increments: &[f64],
    z: f64,
    coeff: &SpdeCoefficients,
) -> Result<SpectralField> {
    let w: f64 = w_increments.iter().sum();
    scaled_free_solution(u0, z, coeff.diffraction, coeff.multiplier(z, w))
}

/// Coherent field `E[u](z) = e^{c z} S(z) u0`, in the same space as `u0`.
pub fn coherent_field(u0: &SpectralField, z: f64, coeff: &SpdeCoefficients) -> Result<SpectralField> {
    if !(z >= 0.0) {
        return Err(Error::Domain { name: "z", value: z, expected: "z >= 0" });
    }
    scaled_free_solution(u0, z, coeff.diffraction, coeff.mean_multiplier(z))
}

/// Deterministic second moment `E|u|² = e^{2(Re c + g²/2) z} |S(z) u0|²`
/// pointwise in physical space.
pub fn second_moment(u0: &SpectralField, z: f64, coeff: &SpdeCoefficients) -> Result<Vec<f64>> {
    let gain = (2.0 * coeff.norm_growth_rate() * z).exp();
    let s = scaled_free_solution(u0, z, coeff.diffraction, Complex64::new(1.0, 0.0))?.into_space(Space::Physical)?;
    Ok(s.data().iter().map(|v| gain * v.norm_sqr()).collect())
}

pub(crate) fn scaled_free_solution(
    u0: &SpectralField,
    z: f64,
    diffraction: f64,
    scalar: Complex64,
) -> Result<SpectralField> {
    let space = u0.space();
    let mut f = u0.clone().into_space(Space::Spectral)?;
    FreePropagator::new(f.grid().kappa2(), diffraction, z).apply(&mut f, scalar)?;
    f.into_space(space)
}

/// Snapshot of one path of the limiting equation.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdeSnapshot {
    pub z: f64,
    /// Value of the driving Wiener path at `z`.
    pub wiener: f64,
    pub field: SpectralField,
}

/// Integrates one path from `u0` with steps of `dz`, recording physical-space
/// snapshots after the step counts in `snapshot_steps` (ascending). The
/// increments `dW` are consumed one per step.
pub fn solve_spde_path(
    u0: &SpectralField,
    coeff: &SpdeCoefficients,
    dz: f64,
    w_increments: &[f64],
    snapshot_steps: &[usize],
) -> Result<Vec<SpdeSnapshot>> {
    if snapshot_steps.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Ordering { name: "snapshot steps" });
    }
    let last = snapshot_steps.last().copied().unwrap_or(0);
    if last > w_increments.len() {
        return Err(Error::Shape { expected: last, found: w_increments.len() });
    }
    let prop = FreePropagator::new(u0.grid().kappa2(), coeff.diffraction, dz);
    let mut f = u0.clone().into_space(Space::Spectral)?;
    let mut out = Vec::with_capacity(snapshot_steps.len());
    let mut w = 0.0;
    let mut step = 0;
    for &target in snapshot_steps {
        while step < target {
            let dw = w_increments[step];
            prop.apply(&mut f, coeff.multiplier(dz, dw))?;
            w += dw;
            step += 1;
        }
        out.push(SpdeSnapshot { z: step as f64 * dz, wiener: w, field: f.to_physical()? });
    }
    Ok(out)
}
