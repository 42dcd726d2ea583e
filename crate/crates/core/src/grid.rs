//! Uniform periodic transverse grid and complex fields on it.
//!
//! The transverse Fourier transform uses the positive-exponent convention
//!
//! ```text
//! û(κ) = ∫ u(x) e^{+iκ·x} dx,      u(x) = (2π)^{-2} ∫ û(κ) e^{-iκ·x} dκ
//! ```
//!
//! discretized with the quadrature weights `Δx²` and `Δκ² / (2π)²`, which makes
//! the discrete pair an exact inverse. Under this convention free paraxial
//! propagation multiplies mode `κ` by `e^{-i |κ|² z / (4π N_F)}`.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;

use num_complex::Complex64;

use crate::error::{positive, Error, Result};
use crate::fft::{Fft2, Sign};
use crate::scales::ModelParams;

#[derive(Debug, Clone)]
pub struct TransverseGrid {
    n: usize,
    extent: f64,
    dx: f64,
    dk: f64,
    x: Vec<f64>,
    kappa: Vec<f64>,
    kappa2: Vec<f64>,
    fft: Fft2,
}

/// Builds a grid with `n` points per axis on `[-extent, extent)`.
pub fn make_grid(n: usize, extent: f64) -> Result<Arc<TransverseGrid>> {
    TransverseGrid::new(n, extent).map(Arc::new)
}

impl TransverseGrid {
    pub fn new(n: usize, extent: f64) -> Result<Self> {
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::GridSize { n });
        }
        positive("extent", extent)?;
        let dx = 2.0 * extent / n as f64;
        let dk = PI / extent;
        let x = (0..n).map(|j| -extent + j as f64 * dx).collect();
        let kappa: Vec<f64> = (0..n)
            .map(|m| if m < n / 2 { m as f64 * dk } else { (m as f64 - n as f64) * dk })
            .collect();
        let kappa2 = (0..n * n)
            .map(|i| {
                let (k1, k2) = (kappa[i % n], kappa[i / n]);
                k1 * k1 + k2 * k2
            })
            .collect();
        Ok(TransverseGrid { n, extent, dx, dk, x, kappa, kappa2, fft: Fft2::new(n)? })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    /// Spectral spacing `π / extent`.
    pub fn dk(&self) -> f64 {
        self.dk
    }

    pub fn x_coords(&self) -> &[f64] {
        &self.x
    }

    /// Spectral modes in DFT layout: `0, Δκ, …, (n/2-1)Δκ, -n/2 Δκ, …, -Δκ`.
    pub fn kappa_coords(&self) -> &[f64] {
        &self.kappa
    }

    /// `|κ|²` for every flat index.
    pub fn kappa2(&self) -> &[f64] {
        &self.kappa2
    }

    /// Flat index of the sample `(x1, x2) = (x[i1], x[i2])`.
    pub fn index(&self, i1: usize, i2: usize) -> usize {
        i2 * self.n + i1
    }

    /// Flat index of the point `x = 0`.
    pub fn origin(&self) -> usize {
        self.index(self.n / 2, self.n / 2)
    }

    /// Whether a beam of width `w0` keeps at least six widths inside the box.
    pub fn beam_fits(&self, w0: f64) -> bool {
        self.extent >= 6.0 * w0
    }

    fn checkerboard(&self, data: &mut [Complex64]) {
        // e^{∓iκ·extent} = (-1)^{m1+m2} for the DFT mode layout
        for (i, v) in data.iter_mut().enumerate() {
            if (i % self.n + i / self.n) % 2 == 1 {
                *v = -*v;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    Physical,
    Spectral,
}

impl fmt::Display for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Space::Physical => "physical",
            Space::Spectral => "spectral",
        })
    }
}

/// An `n × n` complex field tagged with its representation.
#[derive(Debug, Clone)]
pub struct SpectralField {
    grid: Arc<TransverseGrid>,
    data: Vec<Complex64>,
    space: Space,
}

impl PartialEq for SpectralField {
    fn eq(&self, other: &Self) -> bool {
        self.space == other.space
            && self.grid.n == other.grid.n
            && self.grid.extent == other.grid.extent
            && self.data == other.data
    }
}

impl SpectralField {
    pub fn new(grid: Arc<TransverseGrid>, data: Vec<Complex64>, space: Space) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::Shape { expected: grid.len(), found: data.len() });
        }
        Ok(SpectralField { grid, data, space })
    }

    pub fn zeros(grid: Arc<TransverseGrid>, space: Space) -> Self {
        let data = vec![Complex64::new(0.0, 0.0); grid.len()];
        SpectralField { grid, data, space }
    }

    /// Samples `f(x1, x2)` in physical space.
    pub fn from_fn(grid: Arc<TransverseGrid>, f: impl Fn(f64, f64) -> Complex64) -> Self {
        let n = grid.n;
        let data = (0..n * n).map(|i| f(grid.x[i % n], grid.x[i / n])).collect();
        SpectralField { grid, data, space: Space::Physical }
    }

    pub fn grid(&self) -> &Arc<TransverseGrid> {
        &self.grid
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    pub fn expect_space(&self, expected: Space) -> Result<()> {
        if self.space == expected {
            Ok(())
        } else {
            Err(Error::WrongSpace { expected, found: self.space })
        }
    }

    pub fn into_spectral(mut self) -> Result<Self> {
        self.expect_space(Space::Physical)?;
        let g = self.grid.clone();
        g.fft.process(&mut self.data, Sign::Positive);
        g.checkerboard(&mut self.data);
        let w = g.dx * g.dx;
        self.data.iter_mut().for_each(|v| *v *= w);
        self.space = Space::Spectral;
        Ok(self)
    }

    pub fn into_physical(mut self) -> Result<Self> {
        self.expect_space(Space::Spectral)?;
        let g = self.grid.clone();
        g.checkerboard(&mut self.data);
        g.fft.process(&mut self.data, Sign::Negative);
        let w = 1.0 / (g.len() as f64 * g.dx * g.dx);
        self.data.iter_mut().for_each(|v| *v *= w);
        self.space = Space::Physical;
        Ok(self)
    }

    pub fn to_spectral(&self) -> Result<Self> {
        self.clone().into_spectral()
    }

    pub fn to_physical(&self) -> Result<Self> {
        self.clone().into_physical()
    }

    /// Converts to `space`, transforming only if needed.
    pub fn into_space(self, space: Space) -> Result<Self> {
        match (self.space, space) {
            (a, b) if a == b => Ok(self),
            (_, Space::Spectral) => self.into_spectral(),
            (_, Space::Physical) => self.into_physical(),
        }
    }

    /// Squared L² norm of the represented function: `Σ|u|² Δx²` in physical
    /// space and `(2π)^{-2} Σ|û|² Δκ²` in spectral space.
    pub fn norm_sq(&self) -> f64 {
        let s: f64 = self.data.iter().map(|v| v.norm_sqr()).sum();
        match self.space {
            Space::Physical => s * self.grid.dx * self.grid.dx,
            Space::Spectral => s * self.grid.dk * self.grid.dk / (4.0 * PI * PI),
        }
    }

    pub fn scale(&mut self, c: Complex64) {
        self.data.iter_mut().for_each(|v| *v *= c);
    }

    pub fn scaled(&self, c: Complex64) -> Self {
        let mut out = self.clone();
        out.scale(c);
        out
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        other.expect_space(self.space)?;
        if other.data.len() != self.data.len() {
            return Err(Error::Shape { expected: self.data.len(), found: other.data.len() });
        }
        Ok(())
    }

    /// `self += a · other`.
    pub fn axpy(&mut self, a: Complex64, other: &Self) -> Result<()> {
        self.check_compatible(other)?;
        self.data.iter_mut().zip(&other.data).for_each(|(s, o)| *s += a * o);
        Ok(())
    }

    /// `max |self - reference| / max |reference|`.
    pub fn max_relative_error(&self, reference: &Self) -> Result<f64> {
        self.check_compatible(reference)?;
        let scale = reference.data.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let diff = self.data.iter().zip(&reference.data).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        Ok(if scale > 0.0 { diff / scale } else { diff })
    }

    /// `‖self - reference‖₂ / ‖reference‖₂` over the grid.
    pub fn relative_l2_error(&self, reference: &Self) -> Result<f64> {
        self.check_compatible(reference)?;
        let num: f64 = self.data.iter().zip(&reference.data).map(|(a, b)| (a - b).norm_sqr()).sum();
        let den: f64 = reference.data.iter().map(|v| v.norm_sqr()).sum();
        Ok(if den > 0.0 { (num / den).sqrt() } else { num.sqrt() })
    }
}

/// `A exp(-|x|² / w0²)` in physical space.
pub fn gaussian_beam(grid: Arc<TransverseGrid>, w0: f64, amplitude: f64) -> Result<SpectralField> {
    positive("w0", w0)?;
    let inv = 1.0 / (w0 * w0);
    Ok(SpectralField::from_fn(grid, |x1, x2| {
        Complex64::new(amplitude * (-(x1 * x1 + x2 * x2) * inv).exp(), 0.0)
    }))
}

/// Restores the carrier: `Ψ = e^{i k0 r3} u = e^{i k z / ε²} u` with `r3 = L z`.
pub fn envelope_to_field(u: &SpectralField, z: f64, p: &ModelParams) -> Result<SpectralField> {
    u.expect_space(Space::Physical)?;
    let phase = p.k() * z / (p.eps() * p.eps());
    Ok(u.scaled(Complex64::from_polar(1.0, phase)))
}

/// Description of the carrier convention, recorded in run manifests.
pub const CARRIER_CONVENTION: &str = "Psi = exp(+i k z / eps^2) * u, i.e. exp(i k0 r3) with r3 = L z";
