//! Stationary law of the fast subsystem `V = (v̂ᴿ, v̂ᴵ, η)`.
//!
//! With `û` frozen, `V` solves the linear SDE `dV = -γ V dz + D dW`. When every
//! eigenvalue of `γ` has positive real part the stationary law is a centred
//! Gaussian whose covariance solves the Lyapunov equation
//! `γ Σ + Σ γᵀ = D Dᵀ`. This module builds `γ`, solves that equation
//! directly, and compares the result against the closed-form entries.

use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{Complex, Matrix3, Matrix6, Vector3, Vector6};
use rand_core::RngCore;

use crate::error::{Error, Result};
use crate::noise::StreamId;
use crate::scales::ModelParams;
use crate::spde::spde_coefficients;

/// `γ`, `D` and the frozen point `(ûᴿ, ûᴵ)` they were built at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaSystem {
    pub gamma: Matrix3<f64>,
    pub d_vec: Vector3<f64>,
    pub u_point: (f64, f64),
}

/// The six independent entries of the stationary covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StationaryCovariance {
    pub vrvr: f64,
    pub vrvi: f64,
    pub vivi: f64,
    pub vreta: f64,
    pub vieta: f64,
    pub etaeta: f64,
}

pub const ENTRY_NAMES: [&str; 6] = ["vRvR", "vRvI", "vIvI", "vReta", "vIeta", "etaeta"];

impl StationaryCovariance {
    pub fn entries(&self) -> [f64; 6] {
        [self.vrvr, self.vrvi, self.vivi, self.vreta, self.vieta, self.etaeta]
    }

    pub fn from_entries(e: [f64; 6]) -> Self {
        StationaryCovariance { vrvr: e[0], vrvi: e[1], vivi: e[2], vreta: e[3], vieta: e[4], etaeta: e[5] }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.vrvr, self.vrvi, self.vreta, //
            self.vrvi, self.vivi, self.vieta, //
            self.vreta, self.vieta, self.etaeta,
        )
    }

    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        StationaryCovariance {
            vrvr: m[(0, 0)],
            vrvi: m[(0, 1)],
            vivi: m[(1, 1)],
            vreta: m[(0, 2)],
            vieta: m[(1, 2)],
            etaeta: m[(2, 2)],
        }
    }
}

fn require_delta(p: &ModelParams) -> Result<()> {
    if p.delta() > 0.0 {
        Ok(())
    } else {
        Err(Error::Unregularized { delta: p.delta() })
    }
}

pub fn build_gamma(p: &ModelParams, u_r: f64, u_i: f64) -> Result<GammaSystem> {
    require_delta(p)?;
    let (k, beta, delta, l_c) = (p.k(), p.beta(), p.delta(), p.l_c());
    let den = 4.0 * delta * delta * k * k + 1.0;
    let damp = 4.0 * delta * k * k / den;
    let rot = 2.0 * k / den;
    let a = k * k * beta / den;
    let b = 2.0 * delta * k * k * k * beta / den;
    let gamma = Matrix3::new(
        damp, -rot, a * u_r + b * u_i, //
        rot, damp, -b * u_r + a * u_i, //
        0.0, 0.0, 1.0 / l_c,
    );
    Ok(GammaSystem { gamma, d_vec: Vector3::new(0.0, 0.0, 1.0 / l_c.sqrt()), u_point: (u_r, u_i) })
}

/// `λ₁,₂ = (4δk² ± 2k i) / (4δ²k² + 1)` and `λ₃ = 1 / l_c`.
pub fn gamma_eigenvalues_theory(p: &ModelParams) -> [Complex<f64>; 3] {
    let (k, delta) = (p.k(), p.delta());
    let den = 4.0 * delta * delta * k * k + 1.0;
    let re = 4.0 * delta * k * k / den;
    let im = 2.0 * k / den;
    [Complex::new(re, im), Complex::new(re, -im), Complex::new(1.0 / p.l_c(), 0.0)]
}

pub fn gamma_eigenvalues_numeric(gs: &GammaSystem) -> [Complex<f64>; 3] {
    let ev = gs.gamma.complex_eigenvalues();
    [ev[0], ev[1], ev[2]]
}

/// Largest distance from a theoretical eigenvalue to its nearest numeric one.
pub fn eigenvalue_error(p: &ModelParams, gs: &GammaSystem) -> f64 {
    let numeric = gamma_eigenvalues_numeric(gs);
    gamma_eigenvalues_theory(p)
        .iter()
        .map(|t| numeric.iter().map(|n| (n - t).norm()).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max)
}

const PAIRS: [(usize, usize); 6] = [(0, 0), (0, 1), (1, 1), (0, 2), (1, 2), (2, 2)];

/// Solves `γ Σ + Σ γᵀ = D Dᵀ` on the six independent entries of `Σ`.
pub fn stationary_covariance_numeric(gs: &GammaSystem) -> Result<StationaryCovariance> {
    for ev in gamma_eigenvalues_numeric(gs) {
        if !(ev.re > 0.0) {
            return Err(Error::NotHurwitz { re: ev.re, im: ev.im });
        }
    }
    let g = &gs.gamma;
    let mut system = Matrix6::<f64>::zeros();
    for (col, &(a, b)) in PAIRS.iter().enumerate() {
        let mut e = Matrix3::<f64>::zeros();
        e[(a, b)] = 1.0;
        e[(b, a)] = 1.0;
        let image = g * e + e * g.transpose();
        for (row, &(i, j)) in PAIRS.iter().enumerate() {
            system[(row, col)] = image[(i, j)];
        }
    }
    let ddt = gs.d_vec * gs.d_vec.transpose();
    let rhs = Vector6::from_iterator(PAIRS.iter().map(|&(i, j)| ddt[(i, j)]));
    let x = system.lu().solve(&rhs).ok_or(Error::NotHurwitz { re: 0.0, im: 0.0 })?;
    Ok(StationaryCovariance::from_entries([x[0], x[1], x[2], x[3], x[4], x[5]]))
}

/// Normwise backward error `‖γΣ + Σγᵀ - DDᵀ‖ / (2‖γ‖‖Σ‖ + ‖DDᵀ‖)` in the
/// Frobenius norm. Dividing by `‖DDᵀ‖` alone overstates the error when `γ`
/// is stiff and `Σ` large, as happens for small `δ`.
pub fn lyapunov_residual(gs: &GammaSystem, cov: &StationaryCovariance) -> f64 {
    let s = cov.matrix();
    let ddt = gs.d_vec * gs.d_vec.transpose();
    let scale = 2.0 * gs.gamma.norm() * s.norm() + ddt.norm();
    (gs.gamma * s + s * gs.gamma.transpose() - ddt).norm() / scale
}

pub fn min_eigenvalue(cov: &StationaryCovariance) -> f64 {
    cov.matrix().symmetric_eigenvalues().min()
}

/// The closed-form entries. With `a = 1 + δ/l_c` and `den = l_c⁻² + 4k²a²`:
///
/// ```text
/// vRvR  = k²β² (uR²/l_c + 4δk uR uI/l_c + (1/l_c + 8δk²a) uI²) / (16 δ den)
/// vRvI  = k³β² (uI²/l_c - 4k uR uI a - uR²/l_c) / (8 den)
/// vIvI  = k²β² (uI²/l_c - 4δk uR uI/l_c + (1/l_c + 8δk²a) uR²) / (16 δ den)
/// vReta = -k²β (2k uI a + uR/l_c) / (2 den)
/// vIeta =  k²β (2k uR a - uI/l_c) / (2 den)
/// etaeta = 1/2
/// ```
pub fn stationary_covariance_closed_form(p: &ModelParams, u_r: f64, u_i: f64) -> Result<StationaryCovariance> {
    require_delta(p)?;
    let (k, beta, delta, l_c) = (p.k(), p.beta(), p.delta(), p.l_c());
    let a = 1.0 + delta / l_c;
    let inv = 1.0 / l_c;
    let den = inv * inv + 4.0 * k * k * a * a;
    let kb2 = k * k * beta * beta;
    let diag = inv + 8.0 * delta * k * k * a;
    Ok(StationaryCovariance {
        vrvr: kb2 * (u_r * u_r * inv + 4.0 * delta * k * u_r * u_i * inv + diag * u_i * u_i) / (16.0 * delta * den),
        vrvi: k * kb2 * (u_i * u_i * inv - 4.0 * k * u_r * u_i * a - u_r * u_r * inv) / (8.0 * den),
        vivi: kb2 * (u_i * u_i * inv - 4.0 * delta * k * u_r * u_i * inv + diag * u_r * u_r) / (16.0 * delta * den),
        vreta: -k * k * beta * (2.0 * k * u_i * a + u_r * inv) / (2.0 * den),
        vieta: k * k * beta * (2.0 * k * u_r * a - u_i * inv) / (2.0 * den),
        etaeta: 0.5,
    })
}

/// One parameter point of the verification grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceTuple {
    pub params: ModelParams,
    pub u_r: f64,
    pub u_i: f64,
}

/// Ranges of the random verification grid; `delta` is sampled log-uniformly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TupleRanges {
    pub k: (f64, f64),
    pub beta: (f64, f64),
    pub l_c: (f64, f64),
    pub delta: (f64, f64),
    pub u: (f64, f64),
}

impl Default for TupleRanges {
    fn default() -> Self {
        TupleRanges { k: (0.5, 5.0), beta: (0.0, 2.0), l_c: (0.2, 5.0), delta: (1e-3, 1.0), u: (-2.0, 2.0) }
    }
}

fn uniform(rng: &mut impl RngCore, (lo, hi): (f64, f64)) -> f64 {
    let unit = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
    lo + (hi - lo) * unit
}

pub fn random_tuples(n: usize, ranges: &TupleRanges, seed: u64) -> Result<Vec<CovarianceTuple>> {
    let mut rng = StreamId::new(seed, 0).rng();
    (0..n)
        .map(|_| {
            let k = uniform(&mut rng, ranges.k);
            let beta = uniform(&mut rng, ranges.beta);
            let l_c = uniform(&mut rng, ranges.l_c);
            let delta = uniform(&mut rng, (ranges.delta.0.ln(), ranges.delta.1.ln())).exp();
            let u_r = uniform(&mut rng, ranges.u);
            let u_i = uniform(&mut rng, ranges.u);
            Ok(CovarianceTuple { params: ModelParams::new(k, l_c, 1.0, beta, delta, 1.0)?, u_r, u_i })
        })
        .collect()
}

/// Relative discrepancy of one entry. Entries whose reference vanishes (for
/// instance every cross term at `û = 0`) are measured against the largest
/// entry of the same covariance instead.
pub fn entry_error(numeric: f64, reference: f64, scale: f64) -> f64 {
    let diff = (numeric - reference).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / reference.abs().max(1e-300).max(f64::EPSILON * scale)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AppendixReport {
    pub n_tuples: usize,
    /// Worst relative error per entry, in [`ENTRY_NAMES`] order.
    pub max_entry_error: [f64; 6],
    pub worst_entry: &'static str,
    pub worst_tuple: Option<CovarianceTuple>,
    pub max_eigenvalue_error: f64,
    pub max_residual: f64,
    pub min_eigenvalue: f64,
    /// `true` when the closed-form `etaeta` is exactly `1/2` at every tuple.
    pub etaeta_exact: bool,
    /// Largest `|etaeta - 1/2|` of the numeric solve, in units of `f64::EPSILON`.
    pub etaeta_numeric_ulps: f64,
    pub tolerance: f64,
    pub eigen_tolerance: f64,
}

impl AppendixReport {
    pub fn covariance_pass(&self) -> bool {
        self.max_entry_error.iter().all(|e| *e <= self.tolerance) && self.etaeta_exact && self.etaeta_numeric_ulps <= 4.0
    }

    pub fn eigen_pass(&self) -> bool {
        self.max_eigenvalue_error <= self.eigen_tolerance
    }

    pub fn pass(&self) -> bool {
        self.covariance_pass() && self.eigen_pass()
    }

    /// Names of the entries exceeding the tolerance.
    pub fn failing_entries(&self) -> Vec<&'static str> {
        ENTRY_NAMES.iter().zip(&self.max_entry_error).filter(|(_, e)| **e > self.tolerance).map(|(n, _)| *n).collect()
    }
}

pub const APPENDIX_TOLERANCE: f64 = 1e-10;
pub const EIGEN_TOLERANCE: f64 = 1e-12;

/// Compares `closed_form` against the Lyapunov solve at every tuple.
pub fn verify_appendix_a<F>(tuples: &[CovarianceTuple], closed_form: F) -> Result<AppendixReport>
where
    F: Fn(&ModelParams, f64, f64) -> Result<StationaryCovariance>,
{
    let mut report = AppendixReport {
        n_tuples: tuples.len(),
        max_entry_error: [0.0; 6],
        worst_entry: ENTRY_NAMES[0],
        worst_tuple: None,
        max_eigenvalue_error: 0.0,
        max_residual: 0.0,
        min_eigenvalue: f64::INFINITY,
        etaeta_exact: true,
        etaeta_numeric_ulps: 0.0,
        tolerance: APPENDIX_TOLERANCE,
        eigen_tolerance: EIGEN_TOLERANCE,
    };
    let mut worst = -1.0;
    for t in tuples {
        let gs = build_gamma(&t.params, t.u_r, t.u_i)?;
        let numeric = stationary_covariance_numeric(&gs)?;
        let closed = closed_form(&t.params, t.u_r, t.u_i)?;
        let scale = closed.entries().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (j, (n, c)) in numeric.entries().iter().zip(closed.entries()).enumerate() {
            let e = entry_error(*n, c, scale);
            report.max_entry_error[j] = report.max_entry_error[j].max(e);
            if e > worst {
                worst = e;
                report.worst_entry = ENTRY_NAMES[j];
                report.worst_tuple = Some(*t);
            }
        }
        report.etaeta_exact &= closed.etaeta == 0.5;
        report.etaeta_numeric_ulps = report.etaeta_numeric_ulps.max((numeric.etaeta - 0.5).abs() / f64::EPSILON);
        report.max_eigenvalue_error = report.max_eigenvalue_error.max(eigenvalue_error(&t.params, &gs));
        report.max_residual = report.max_residual.max(lyapunov_residual(&gs, &numeric));
        report.min_eigenvalue = report.min_eigenvalue.min(min_eigenvalue(&numeric) / scale.max(f64::MIN_POSITIVE));
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemoRow {
    pub delta: f64,
    /// `δ vRvR(δ)` from the closed form.
    pub delta_vrvr: f64,
    /// `δ vRvR(δ)` from the Lyapunov solve.
    pub delta_vrvr_numeric: f64,
    pub c_delta: Complex<f64>,
    /// `|c(δ) - c(0)|`.
    pub c_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoReport {
    pub rows: Vec<DemoRow>,
    pub c_zero: Complex<f64>,
    /// Smallest `K` with `|c(δ) - c(0)| <= K δ` over the sweep.
    pub fitted_k: f64,
    /// Closed form of `δ vRvR` at `δ = 0`.
    pub delta_vrvr_limit: f64,
}

impl DemoReport {
    /// `|δ_j vRvR(δ_j) - δ_{j+1} vRvR(δ_{j+1})|` along the sweep.
    pub fn successive_differences(&self) -> Vec<f64> {
        self.rows.windows(2).map(|w| (w[0].delta_vrvr - w[1].delta_vrvr).abs()).collect()
    }

    pub fn differences_decrease(&self) -> bool {
        self.successive_differences().windows(2).all(|w| w[1] < w[0])
    }

    pub fn pass(&self) -> bool {
        let bounded = self.fitted_k.is_finite() && self.rows.iter().all(|r| r.c_gap <= self.fitted_k * r.delta * (1.0 + 1e-12));
        self.differences_decrease() && bounded && self.delta_vrvr_limit.is_finite() && self.c_zero.norm().is_finite()
    }
}

/// Default sweep `δ = 10^{-1}, 10^{-1.5}, …, 10^{-4}`.
pub fn default_delta_sweep() -> Vec<f64> {
    (0..7).map(|j| 10f64.powf(-1.0 - 0.5 * j as f64)).collect()
}

/// Shows `vRvR ~ C/δ` while `c(δ)` stays Lipschitz at `δ = 0`.
pub fn limit_noncommutativity_demo(p: &ModelParams, u_r: f64, u_i: f64, deltas: &[f64]) -> Result<DemoReport> {
    if deltas.windows(2).any(|w| !(w[0] > w[1])) || deltas.iter().any(|d| !(*d > 0.0)) {
        return Err(Error::Ordering { name: "delta sweep (positive, decreasing)" });
    }
    let c_zero = spde_coefficients(&p.with_delta(0.0)?).drift;
    let mut rows = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let q = p.with_delta(delta)?;
        let closed = stationary_covariance_closed_form(&q, u_r, u_i)?;
        let numeric = stationary_covariance_numeric(&build_gamma(&q, u_r, u_i)?)?;
        let c_delta = spde_coefficients(&q).drift;
        rows.push(DemoRow {
            delta,
            delta_vrvr: delta * closed.vrvr,
            delta_vrvr_numeric: delta * numeric.vrvr,
            c_delta,
            c_gap: (c_delta - c_zero).norm(),
        });
    }
    let fitted_k = rows.iter().map(|r| r.c_gap / r.delta).fold(0.0, f64::max);
    let (k, beta, l_c) = (p.k(), p.beta(), p.l_c());
    let den0 = 1.0 / (l_c * l_c) + 4.0 * k * k;
    let delta_vrvr_limit = k * k * beta * beta * (u_r * u_r + u_i * u_i) / (l_c * 16.0 * den0);
    Ok(DemoReport { rows, c_zero, fitted_k, delta_vrvr_limit })
}

/// Renders a report line such as `vRvR 3.1e-15`.
pub fn describe_errors(report: &AppendixReport) -> String {
    use core::fmt::Write;
    let mut s = String::new();
    for (n, e) in ENTRY_NAMES.iter().zip(&report.max_entry_error) {
        let _ = write!(s, "{n} {e:.3e} ");
    }
    s.pop();
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(k: f64, beta: f64, l_c: f64, delta: f64) -> ModelParams {
        ModelParams::new(k, l_c, 1.0, beta, delta, 1.0).unwrap()
    }

    #[test]
    fn gamma_entries_example() {
        let p = params(1.0, 1.0, 2.0, 0.5);
        let gs = build_gamma(&p, 0.0, 0.0).unwrap();
        assert!((gs.gamma[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((gs.gamma[(1, 0)] - 1.0).abs() < 1e-15);
        assert_eq!(gs.gamma[(2, 2)], 0.5);
        assert_eq!(gs.gamma[(2, 0)], 0.0);
        assert_eq!(gs.gamma[(2, 1)], 0.0);
        let p0 = params(1.0, 0.0, 2.0, 0.5);
        let gs = build_gamma(&p0, 1.3, -0.4).unwrap();
        assert_eq!(gs.gamma.column(2).into_owned(), Vector3::new(0.0, 0.0, 0.5));
        let small = build_gamma(&params(1.0, 1.0, 1.0, 1e-12), 0.0, 0.0).unwrap();
        assert!(small.gamma[(0, 0)] < 1e-11);
    }

    #[test]
    fn refuses_unregularized() {
        let p = params(1.0, 1.0, 1.0, 0.0);
        assert!(matches!(build_gamma(&p, 1.0, 0.0), Err(Error::Unregularized { .. })));
        assert!(stationary_covariance_closed_form(&p, 1.0, 0.0).is_err());
    }

    #[test]
    fn non_hurwitz_is_reported() {
        let mut gs = build_gamma(&params(1.0, 1.0, 1.0, 0.1), 1.0, 0.0).unwrap();
        gs.gamma[(0, 0)] = 0.0;
        gs.gamma[(1, 1)] = 0.0;
        assert!(matches!(stationary_covariance_numeric(&gs), Err(Error::NotHurwitz { .. })));
    }

    #[test]
    fn vrvr_example() {
        let p = params(1.0, 1.0, 1.0, 0.1);
        let want = 1.0 / 9.344;
        let cf = stationary_covariance_closed_form(&p, 1.0, 0.0).unwrap();
        let num = stationary_covariance_numeric(&build_gamma(&p, 1.0, 0.0).unwrap()).unwrap();
        assert!((cf.vrvr - want).abs() < 1e-15);
        assert!((num.vrvr - want).abs() < 1e-13);
        assert!((0.1070205 - want).abs() < 1e-7);
    }

    #[test]
    fn decoupled_medium() {
        let p = params(2.0, 0.0, 1.5, 0.2);
        let num = stationary_covariance_numeric(&build_gamma(&p, 0.7, -1.0).unwrap()).unwrap();
        let cf = stationary_covariance_closed_form(&p, 0.7, -1.0).unwrap();
        assert_eq!(cf.etaeta, 0.5);
        assert!((num.etaeta - 0.5).abs() <= 4.0 * f64::EPSILON);
        for s in [num, cf] {
            for e in &s.entries()[..5] {
                assert!(e.abs() < 1e-15);
            }
        }
    }

    #[test]
    fn cross_terms_vanish_at_origin() {
        let cf = stationary_covariance_closed_form(&params(1.2, 0.8, 0.6, 0.05), 0.0, 0.0).unwrap();
        assert_eq!(cf.vreta, 0.0);
        assert_eq!(cf.vieta, 0.0);
    }

    #[test]
    fn swap_symmetry() {
        // Swapping the frozen point exchanges the diagonal entries up to the
        // sign of their mixed term; the swap combined with uI -> -uI (a
        // rotation of û by -i) exchanges them exactly.
        let p = params(1.7, 0.9, 0.8, 0.03);
        let (a, b) = (0.6, -1.3);
        let s = stationary_covariance_closed_form(&p, a, b).unwrap();
        let t = stationary_covariance_closed_form(&p, b, a).unwrap();
        let r = stationary_covariance_closed_form(&p, b, -a).unwrap();
        let (k, beta, l_c, delta) = (p.k(), p.beta(), p.l_c(), p.delta());
        let den = 1.0 / (l_c * l_c) + 4.0 * k * k * (1.0 + delta / l_c).powi(2);
        let mixed = k * k * beta * beta * 4.0 * delta * k * a * b / l_c / (16.0 * delta * den);
        assert!((s.vrvr - t.vivi - 2.0 * mixed).abs() < 1e-14 * s.vrvr);
        assert!((s.vivi - t.vrvr + 2.0 * mixed).abs() < 1e-14 * s.vivi);
        assert!((s.vrvr - r.vivi).abs() < 1e-14 * s.vrvr);
        assert!((s.vivi - r.vrvr).abs() < 1e-14 * s.vivi);
        assert!((s.vrvi + r.vrvi).abs() < 1e-14 * s.vrvi.abs());
        assert!((s.vreta + r.vieta).abs() < 1e-14 * s.vreta.abs());
        assert!((s.vieta - r.vreta).abs() < 1e-14 * s.vieta.abs());
    }

    #[test]
    fn delta_vrvr_has_finite_limit() {
        let p = params(1.0, 1.0, 1.0, 1.0);
        let demo = limit_noncommutativity_demo(&p, 0.8, 0.3, &default_delta_sweep()).unwrap();
        let last = demo.rows.last().unwrap();
        assert!(demo.delta_vrvr_limit > 0.0);
        assert!((last.delta_vrvr - demo.delta_vrvr_limit).abs() < 1e-3 * demo.delta_vrvr_limit);
        assert!((last.delta_vrvr_numeric - last.delta_vrvr).abs() < 1e-8 * last.delta_vrvr);
        assert!(demo.pass());
        assert_eq!(demo.c_zero, spde_coefficients(&p.with_delta(0.0).unwrap()).drift);
        assert!(limit_noncommutativity_demo(&p, 1.0, 0.0, &[1e-3, 1e-2]).is_err());
    }

    #[test]
    fn verification_grid_passes() {
        let tuples = random_tuples(200, &TupleRanges::default(), 42).unwrap();
        let r = verify_appendix_a(&tuples, stationary_covariance_closed_form).unwrap();
        assert!(r.pass(), "{}", describe_errors(&r));
        assert!(r.max_residual <= 1e-12, "{}", r.max_residual);
        assert!(r.min_eigenvalue >= -1e-12);
    }

    #[test]
    fn corrupted_closed_form_is_localized() {
        let tuples = random_tuples(100, &TupleRanges::default(), 7).unwrap();
        let flipped = |p: &ModelParams, a: f64, b: f64| {
            let mut s = stationary_covariance_closed_form(p, a, b)?;
            s.vieta = -s.vieta;
            Ok(s)
        };
        let r = verify_appendix_a(&tuples, flipped).unwrap();
        assert!(!r.pass());
        assert_eq!(r.failing_entries(), ["vIeta"]);
        assert_eq!(r.worst_entry, "vIeta");
    }

    /// Taylor series; adequate for the small arguments used below.
    fn expm3(a: &Matrix3<f64>) -> Matrix3<f64> {
        let mut term = Matrix3::identity();
        let mut sum = term;
        for j in 1..25 {
            term = term * a / j as f64;
            sum += term;
        }
        sum
    }

    #[test]
    fn monte_carlo_matches_stationary_covariance() {
        // Exact discretization with step h: V' = e^{-γh} V + noise, where the
        // noise covariance is integrated by quadrature rather than taken from
        // the Lyapunov solution.
        let p = params(1.0, 1.0, 1.0, 0.5);
        let gs = build_gamma(&p, 0.8, -0.5).unwrap();
        let h = 0.1;
        let prop = expm3(&(-gs.gamma * h));
        let ddt = gs.d_vec * gs.d_vec.transpose();
        let m = 2000;
        let mut q = Matrix3::<f64>::zeros();
        for j in 0..=m {
            let s = h * j as f64 / m as f64;
            let w = if j == 0 || j == m { 1.0 } else if j % 2 == 1 { 4.0 } else { 2.0 };
            let e = expm3(&(-gs.gamma * s));
            q += e * ddt * e.transpose() * (w * h / (3.0 * m as f64));
        }
        let chol = q.cholesky().unwrap().l();
        let mut rng = StreamId::new(2024, 0).rng();
        let mut normal = || crate::noise::normal(&mut rng);
        let mut v = Vector3::zeros();
        for _ in 0..200 {
            v = prop * v + chol * Vector3::new(normal(), normal(), normal());
        }
        let (batches, per) = (200, 2000);
        let mut means = Vec::with_capacity(batches);
        for _ in 0..batches {
            let mut acc = Matrix3::<f64>::zeros();
            for _ in 0..per {
                v = prop * v + chol * Vector3::new(normal(), normal(), normal());
                acc += v * v.transpose();
            }
            means.push(StationaryCovariance::from_matrix(&(acc / per as f64)).entries());
        }
        let sigma = stationary_covariance_numeric(&gs).unwrap().entries();
        for j in 0..6 {
            let mean = means.iter().map(|e| e[j]).sum::<f64>() / batches as f64;
            let var = means.iter().map(|e| (e[j] - mean).powi(2)).sum::<f64>() / (batches - 1) as f64;
            let se = (var / batches as f64).sqrt();
            assert!((mean - sigma[j]).abs() <= 3.0 * se, "{}: {mean} vs {} (se {se})", ENTRY_NAMES[j], sigma[j]);
        }
    }

    proptest! {
        #[test]
        fn lyapunov_solution_is_psd_and_accurate(
            k in 0.5f64..5.0, beta in 0.0f64..2.0, l_c in 0.2f64..5.0,
            log_delta in -6.9f64..0.0, u_r in -2.0f64..2.0, u_i in -2.0f64..2.0,
        ) {
            let p = params(k, beta, l_c, log_delta.exp());
            let gs = build_gamma(&p, u_r, u_i).unwrap();
            let s = stationary_covariance_numeric(&gs).unwrap();
            prop_assert!(lyapunov_residual(&gs, &s) <= 1e-12);
            let scale = s.entries().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            prop_assert!(min_eigenvalue(&s) >= -1e-12 * scale);
            prop_assert!(s.vrvr >= 0.0 && s.vivi >= 0.0);
            prop_assert!((s.etaeta - 0.5).abs() <= 4.0 * f64::EPSILON);
            prop_assert!(eigenvalue_error(&p, &gs) <= 1e-12);
        }
    }
}
