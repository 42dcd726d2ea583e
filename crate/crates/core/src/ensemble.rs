//! Monte-Carlo ensembles over independent paths.
//!
//! Paths are grouped into fixed-size chunks of consecutive indices. An
//! executor maps chunks to partial accumulators in any order or in parallel,
//! and the partials are merged in chunk order. Since every path draws from
//! its own `(master_seed, path_index)` stream and the accumulators sum
//! exactly, results are bitwise independent of the executor and chunk size.

use alloc::vec::Vec;

use num_complex::Complex64;

use crate::analysis::EnsembleStats;
use crate::error::{Error, Result};
use crate::fullmodel::{FullSolver, InitialSlope, DEFAULT_C_STAB};
use crate::grid::{Space, SpectralField};
use crate::noise::{sample_wiener_path, StreamId};
use crate::scales::ModelParams;
use crate::spde::{scaled_free_solution, solve_spde_path, spde_coefficients, SpdeCoefficients};

pub const DEFAULT_CHUNK: u64 = 16;

/// Runs independent chunk jobs and returns their results in chunk order.
pub trait PathExecutor: Sync {
    fn workers(&self) -> usize;

    fn map_chunks<T, F>(&self, n_chunks: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

/// Runs chunks one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl PathExecutor for Sequential {
    fn workers(&self) -> usize {
        1
    }

    fn map_chunks<T, F>(&self, n_chunks: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n_chunks).map(f).collect()
    }
}

/// Accumulates `shapes.len()` fields per path over `n_paths` paths. `init`
/// builds per-chunk working state; `run` produces the fields of one path.
pub fn collect_ensemble<X, W, I, R>(
    exec: &X,
    n_paths: u64,
    chunk: u64,
    shapes: &[usize],
    init: I,
    run: R,
) -> Result<Vec<EnsembleStats>>
where
    X: PathExecutor,
    I: Fn() -> Result<W> + Sync + Send,
    R: Fn(&mut W, u64) -> Result<Vec<Vec<Complex64>>> + Sync + Send,
{
    if chunk == 0 {
        return Err(Error::Domain { name: "chunk", value: 0.0, expected: "at least one path per chunk" });
    }
    let n_chunks = n_paths.div_ceil(chunk) as usize;
    let partials = exec.map_chunks(n_chunks, |c| -> Result<Vec<EnsembleStats>> {
        let start = c as u64 * chunk;
        let end = (start + chunk).min(n_paths);
        let mut stats: Vec<EnsembleStats> = shapes.iter().map(|&len| EnsembleStats::new(start, len)).collect();
        let mut worker = init()?;
        for path in start..end {
            let fields = run(&mut worker, path)?;
            if fields.len() != shapes.len() {
                return Err(Error::Shape { expected: shapes.len(), found: fields.len() });
            }
            for (s, f) in stats.iter_mut().zip(&fields) {
                s.push(path, f)?;
            }
        }
        Ok(stats)
    });
    let mut total: Vec<EnsembleStats> = shapes.iter().map(|&len| EnsembleStats::new(0, len)).collect();
    for part in partials {
        for (t, p) in total.iter_mut().zip(part?) {
            t.merge(&p)?;
        }
    }
    Ok(total)
}

/// Ensemble statistics at a list of propagation distances.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotStats {
    pub zs: Vec<f64>,
    /// Physical-space statistics of the field, one entry per `zs`.
    pub fields: Vec<EnsembleStats>,
}

/// Limiting-equation ensemble with independent Wiener paths. Snapshots are
/// taken after the given step counts of size `dz`.
pub fn spde_ensemble<X: PathExecutor>(
    exec: &X,
    u0: &SpectralField,
    coeff: &SpdeCoefficients,
    dz: f64,
    snapshot_steps: &[usize],
    n_paths: u64,
    master_seed: u64,
) -> Result<SnapshotStats> {
    crate::error::positive("dz", dz)?;
    let n_steps = snapshot_steps.last().copied().unwrap_or(0);
    let len = u0.grid().len();
    let shapes = alloc::vec![len; snapshot_steps.len()];
    let fields = collect_ensemble(
        exec,
        n_paths,
        DEFAULT_CHUNK,
        &shapes,
        || Ok(()),
        |_, path| {
            let w = if n_steps == 0 { Vec::new() } else { sample_wiener_path(n_steps, dz, StreamId::new(master_seed, path))? };
            let snaps = solve_spde_path(u0, coeff, dz, &w, snapshot_steps)?;
            Ok(snaps.into_iter().map(|s| s.field.into_data()).collect())
        },
    )?;
    Ok(SnapshotStats { zs: snapshot_steps.iter().map(|&n| n as f64 * dz).collect(), fields })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FullEnsembleSpec {
    pub z_end: f64,
    pub snapshot_zs: Vec<f64>,
    pub n_paths: u64,
    pub master_seed: u64,
    pub slope: InitialSlope,
    pub c_stab: f64,
    pub chunk: u64,
}

impl FullEnsembleSpec {
    pub fn new(z_end: f64, n_paths: u64, master_seed: u64) -> Self {
        FullEnsembleSpec {
            z_end,
            snapshot_zs: Vec::new(),
            n_paths,
            master_seed,
            slope: InitialSlope::Zero,
            c_stab: DEFAULT_C_STAB,
            chunk: DEFAULT_CHUNK,
        }
    }
}

/// Full-model ensemble. Besides the field itself each path contributes the
/// residual `u - m' S(z) u0` against its own limiting-model prediction, where
/// `m' = exp((c + g²/2) z + i g W')` and `W' = W - ε sqrt(l_c) (η_z - η_0)` is
/// the medium's integrated fluctuation `∫η dz / (ε sqrt(l_c))`.
#[derive(Debug, Clone, PartialEq)]
pub struct FullEnsemble {
    pub zs: Vec<f64>,
    pub fields: Vec<EnsembleStats>,
    pub residuals: Vec<EnsembleStats>,
    /// Per-path `‖u - m' S u0‖ / ‖m' S u0‖`, one single-entry accumulator per snapshot.
    pub pathwise: Vec<EnsembleStats>,
}

/// `Var(W')` at distance `z`: `z - τ (1 - e^{-z/τ})` with `τ = ε² l_c`.
pub fn integrated_noise_variance(p: &ModelParams, z: f64) -> f64 {
    let tau = p.correlation_z();
    z + tau * (-z / tau).exp_m1()
}

/// `E[m'] = exp((c + g²/2) z - g² Var(W') / 2)`.
pub fn control_mean(p: &ModelParams, z: f64) -> Complex64 {
    let c = spde_coefficients(p);
    let g2 = c.noise * c.noise;
    ((c.drift + 0.5 * g2) * z - 0.5 * g2 * integrated_noise_variance(p, z)).exp()
}

pub fn full_ensemble<X: PathExecutor>(
    exec: &X,
    u0: &SpectralField,
    p: &ModelParams,
    spec: &FullEnsembleSpec,
) -> Result<FullEnsemble> {
    let coeff = spde_coefficients(p);
    let probe = FullSolver::with_stability(p, u0.grid().clone(), spec.c_stab)?;
    let mut zs = spec.snapshot_zs.clone();
    if zs.last() != Some(&spec.z_end) {
        zs.push(spec.z_end);
    }
    let free: Vec<SpectralField> = zs
        .iter()
        .map(|&z| scaled_free_solution(u0, z, coeff.diffraction, Complex64::new(1.0, 0.0))?.into_space(Space::Physical))
        .collect::<Result<_>>()?;
    let len = u0.grid().len();
    let n = zs.len();
    let mut shapes = alloc::vec![len; 2 * n];
    shapes.extend(core::iter::repeat_n(1, n));
    let scale = p.eps() * p.l_c().sqrt();
    let mut stats = collect_ensemble(
        exec,
        spec.n_paths,
        spec.chunk,
        &shapes,
        || Ok(probe.clone()),
        |solver, path| {
            let tr = solver.solve(u0, spec.z_end, StreamId::new(spec.master_seed, path), &spec.snapshot_zs, spec.slope)?;
            let mut out = Vec::with_capacity(3 * n);
            let mut resid = Vec::with_capacity(n);
            let mut dist = Vec::with_capacity(n);
            for (snap, s) in tr.snapshots.iter().zip(&free) {
                let u = snap.u_hat.to_physical()?;
                let w_prime = snap.wiener - scale * (snap.eta - tr.eta0);
                let m = coeff.multiplier(snap.z, w_prime);
                let r: Vec<Complex64> = u.data().iter().zip(s.data()).map(|(a, b)| a - m * b).collect();
                let rn: f64 = r.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
                let sn: f64 = s.data().iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt() * m.norm();
                dist.push(alloc::vec![Complex64::new(rn / sn, 0.0)]);
                resid.push(r);
                out.push(u.into_data());
            }
            out.extend(resid);
            out.extend(dist);
            Ok(out)
        },
    )?;
    let pathwise = stats.split_off(2 * n);
    let residuals = stats.split_off(n);
    Ok(FullEnsemble { zs, fields: stats, residuals, pathwise })
}
