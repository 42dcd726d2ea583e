//! Dimensionless parameters of the paraxial white-noise regime.
//!
//! A propagation scenario is described by its physical lengths
//! ([`PhysicalScales`]); every solver consumes only the dimensionless
//! [`ModelParams`] derived from it.

use core::f64::consts::PI;

use crate::error::{nonnegative, positive, Result};

/// Physical description of a propagation scenario, all lengths in one unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalScales {
    /// Longitudinal propagation distance `L`.
    pub propagation_length: f64,
    /// Transverse reference scale `L_x`, typically the beam width.
    pub transverse_scale: f64,
    /// Reference length `ℓ` sizing both the wavelength and the correlation length.
    pub reference_length: f64,
    /// Free-space wavenumber `k0`.
    pub wavenumber: f64,
    /// Correlation length `ℓ_c` of the refractive-index fluctuations.
    pub correlation_length: f64,
    /// Fluctuation strength `σ` in `n² = 1 + σ ν`.
    pub sigma: f64,
}

impl PhysicalScales {
    /// Carrier wavelength `λ0 = 2π / k0`.
    pub fn wavelength(&self) -> f64 {
        2.0 * PI / self.wavenumber
    }

    pub fn validate(&self) -> Result<()> {
        positive("L", self.propagation_length)?;
        positive("L_x", self.transverse_scale)?;
        positive("ell", self.reference_length)?;
        positive("k0", self.wavenumber)?;
        positive("ell_c", self.correlation_length)?;
        nonnegative("sigma", self.sigma)?;
        Ok(())
    }
}

/// Dimensionless parameter record shared by every solver.
///
/// `mu` is always `1 / (k l_c)`; it is derived on construction and cannot be
/// set independently.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    k: f64,
    l_c: f64,
    eps: f64,
    beta: f64,
    delta: f64,
    fresnel: f64,
    mu: f64,
}

impl ModelParams {
    pub fn new(k: f64, l_c: f64, eps: f64, beta: f64, delta: f64, fresnel: f64) -> Result<Self> {
        positive("k", k)?;
        positive("l_c", l_c)?;
        positive("eps", eps)?;
        nonnegative("beta", beta)?;
        nonnegative("delta", delta)?;
        positive("N_F", fresnel)?;
        Ok(ModelParams { k, l_c, eps, beta, delta, fresnel, mu: 1.0 / (k * l_c) })
    }

    pub fn with_delta(self, delta: f64) -> Result<Self> {
        Self::new(self.k, self.l_c, self.eps, self.beta, delta, self.fresnel)
    }

    pub fn with_beta(self, beta: f64) -> Result<Self> {
        Self::new(self.k, self.l_c, self.eps, beta, self.delta, self.fresnel)
    }

    pub fn with_eps(self, eps: f64) -> Result<Self> {
        Self::new(self.k, self.l_c, eps, self.beta, self.delta, self.fresnel)
    }

    /// Dimensionless wavenumber `k = k0 ℓ`.
    pub fn k(&self) -> f64 {
        self.k
    }

    /// Dimensionless correlation length `ℓ_c / ℓ`.
    pub fn l_c(&self) -> f64 {
        self.l_c
    }

    /// Scale separation `ε = sqrt(ℓ / L)`.
    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Rescaled fluctuation strength `β = σ / ε`.
    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Regularization (damping) parameter.
    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Fresnel number `N_F`.
    pub fn fresnel(&self) -> f64 {
        self.fresnel
    }

    /// Wavelength to correlation-length ratio `λ0 / (2π ℓ_c)`.
    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Coefficient `1 / (4π N_F)` of the transverse Laplacian.
    pub fn diffraction(&self) -> f64 {
        1.0 / (4.0 * PI * self.fresnel)
    }

    /// Correlation length `ε² l_c` of the medium process in `z` units.
    pub fn correlation_z(&self) -> f64 {
        self.eps * self.eps * self.l_c
    }
}

/// Converts a physical scenario into [`ModelParams`].
pub fn derive_params(s: &PhysicalScales, delta: f64) -> Result<ModelParams> {
    s.validate()?;
    nonnegative("delta", delta)?;
    let ell = s.reference_length;
    let k = s.wavenumber * ell;
    let l_c = s.correlation_length / ell;
    let eps = (ell / s.propagation_length).sqrt();
    let beta = s.sigma / eps;
    let fresnel = s.transverse_scale * s.transverse_scale * k / (2.0 * PI * s.propagation_length * ell);
    ModelParams::new(k, l_c, eps, beta, delta, fresnel)
}

/// Thresholds used to classify a parameter set; advisory only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeThresholds {
    pub eps_max: f64,
    pub fresnel_min: f64,
    pub fresnel_max: f64,
    /// `mu` at or below this is the high-frequency regime.
    pub high_frequency_mu: f64,
    /// `mu` at or above this is the long-wave regime.
    pub long_wave_mu: f64,
}

impl Default for RegimeThresholds {
    fn default() -> Self {
        RegimeThresholds {
            eps_max: 0.1,
            fresnel_min: 0.1,
            fresnel_max: 10.0,
            high_frequency_mu: 0.1,
            long_wave_mu: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrequencyRegime {
    /// Wavelength small against the correlation length (`mu << 1`).
    HighFrequency,
    /// Wavelength comparable to the correlation length (`mu ~ 1`).
    SameOrder,
    /// Wavelength large against the correlation length.
    LongWave,
}

impl FrequencyRegime {
    pub fn as_str(&self) -> &'static str {
        match self {
            FrequencyRegime::HighFrequency => "high-frequency",
            FrequencyRegime::SameOrder => "same-order",
            FrequencyRegime::LongWave => "long-wave",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeReport {
    pub eps: f64,
    pub fresnel: f64,
    pub mu: f64,
    pub paraxial_ok: bool,
    pub fresnel_ok: bool,
    pub regime: FrequencyRegime,
}

impl RegimeReport {
    pub fn has_warnings(&self) -> bool {
        !(self.paraxial_ok && self.fresnel_ok)
    }
}

pub fn regime_report(p: &ModelParams, t: &RegimeThresholds) -> RegimeReport {
    let regime = if p.mu() <= t.high_frequency_mu {
        FrequencyRegime::HighFrequency
    } else if p.mu() >= t.long_wave_mu {
        FrequencyRegime::LongWave
    } else {
        FrequencyRegime::SameOrder
    };
    RegimeReport {
        eps: p.eps(),
        fresnel: p.fresnel(),
        mu: p.mu(),
        paraxial_ok: p.eps() <= t.eps_max,
        fresnel_ok: (t.fresnel_min..=t.fresnel_max).contains(&p.fresnel()),
        regime,
    }
}
