use num_complex::Complex64;
use paraxial_core::analysis::{decay_constant_theory, EnsembleStats};
use paraxial_core::fullmodel::{solve_full, InitialSlope};
use paraxial_core::grid::{gaussian_beam, make_grid};
use paraxial_core::homog::{
    build_gamma, eigenvalue_error, lyapunov_residual, min_eigenvalue, stationary_covariance_closed_form,
    stationary_covariance_numeric,
};
use paraxial_core::noise::{sample_wiener_path, StreamId};
use paraxial_core::scales::{derive_params, ModelParams, PhysicalScales};
use paraxial_core::spde::{closed_form_solution, solve_spde_path, spde_coefficients};
use proptest::prelude::*;

fn model() -> impl Strategy<Value = ModelParams> {
    (0.5f64..5.0, 0.2f64..5.0, 0.01f64..0.3, 0.0f64..2.0, 1e-3f64..1.0, 0.05f64..5.0)
        .prop_map(|(k, l_c, eps, beta, delta, nf)| ModelParams::new(k, l_c, eps, beta, delta, nf).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scales_round_trip(
        l in 10.0f64..1e6,
        lx in 0.5f64..100.0,
        ell in 0.1f64..10.0,
        k0 in 0.1f64..50.0,
        ellc in 0.1f64..10.0,
        sigma in 0.0f64..0.5,
    ) {
        let s = PhysicalScales {
            propagation_length: l,
            transverse_scale: lx,
            reference_length: ell,
            wavenumber: k0,
            correlation_length: ellc,
            sigma,
        };
        let p = derive_params(&s, 0.0).unwrap();
        prop_assert!((p.beta() * p.eps() - sigma).abs() <= 1e-14 * sigma.max(f64::MIN_POSITIVE));
        prop_assert!((p.l_c() * ell - ellc).abs() <= 1e-14 * ellc);
        prop_assert!((p.mu() * p.k() * p.l_c() - 1.0).abs() <= 1e-15);
        let nf = lx * lx * p.k() / (2.0 * std::f64::consts::PI * l * ell);
        prop_assert!((p.fresnel() - nf).abs() <= 1e-14 * nf);
    }

    #[test]
    fn limiting_coefficients(p in model()) {
        let c = spde_coefficients(&p);
        let strength = p.k().powi(2) * p.beta().powi(2) * p.l_c() / 8.0;
        prop_assert!((0.5 * c.noise * c.noise - strength).abs() <= 1e-14 * strength.max(1e-300));
        if p.beta() > 0.0 {
            prop_assert!(c.drift.re < 0.0);
        }
        let p0 = p.with_delta(0.0).unwrap();
        let c0 = spde_coefficients(&p0);
        let lam = decay_constant_theory(&p0);
        prop_assert!((lam + c0.drift.re).abs() <= 4.0 * f64::EPSILON * lam.max(f64::MIN_POSITIVE));
        let mu2 = p0.mu() * p0.mu() / 4.0;
        let rate = strength * mu2 / (1.0 + mu2);
        prop_assert!((c0.norm_growth_rate() - rate).abs() <= 1e-13 * strength.max(1e-300));
    }

    #[test]
    fn split_step_equals_closed_form(p in model(), n in 1usize..400, dz in 1e-4f64..1e-2, seed in any::<u64>()) {
        let coeff = spde_coefficients(&p);
        let u0 = gaussian_beam(make_grid(16, 6.0).unwrap(), 1.0, 1.0).unwrap();
        let w = sample_wiener_path(n, dz, StreamId::new(seed, 0)).unwrap();
        let snap = solve_spde_path(&u0, &coeff, dz, &w, &[n]).unwrap().remove(0);
        let exact = closed_form_solution(&u0, &w, n as f64 * dz, &coeff).unwrap();
        prop_assert!(snap.field.max_relative_error(&exact).unwrap() <= 1e-10);

        // the norm ratio is deterministic on every path
        let free = closed_form_solution(&u0, &[], snap.z, &spde_coefficients(&p.with_beta(0.0).unwrap())).unwrap();
        let ratio = (snap.field.norm_sq() / free.norm_sq()).sqrt();
        let expected = (coeff.norm_growth_rate() * snap.z).exp();
        prop_assert!((ratio / expected - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn gamma_structure_and_covariance(p in model(), u_r in -2.0f64..2.0, u_i in -2.0f64..2.0) {
        let gs = build_gamma(&p, u_r, u_i).unwrap();
        prop_assert_eq!(gs.gamma[(2, 0)], 0.0);
        prop_assert_eq!(gs.gamma[(2, 1)], 0.0);
        prop_assert_eq!(gs.gamma[(2, 2)], 1.0 / p.l_c());
        prop_assert!(eigenvalue_error(&p, &gs) <= 1e-12);

        let numeric = stationary_covariance_numeric(&gs).unwrap();
        let closed = stationary_covariance_closed_form(&p, u_r, u_i).unwrap();
        prop_assert_eq!(closed.etaeta, 0.5);
        prop_assert!(closed.vrvr >= 0.0 && closed.vivi >= 0.0);
        prop_assert!(lyapunov_residual(&gs, &numeric) <= 1e-12);
        prop_assert!(min_eigenvalue(&numeric) >= -1e-12);
        let scale = closed.entries().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in numeric.entries().iter().zip(closed.entries()) {
            prop_assert!((a - b).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn merge_equals_concatenation(split in 0usize..30, seed in any::<u64>()) {
        let n = 30;
        let draws: Vec<Vec<Complex64>> = (0..n)
            .map(|i| {
                let w = sample_wiener_path(4, 1.0, StreamId::new(seed, i as u64)).unwrap();
                vec![Complex64::new(w[0], w[1]), Complex64::new(w[2], w[3])]
            })
            .collect();
        let mut all = EnsembleStats::new(0, 2);
        for (i, d) in draws.iter().enumerate() {
            all.push(i as u64, d).unwrap();
        }
        let mut left = EnsembleStats::new(0, 2);
        let mut right = EnsembleStats::new(split as u64, 2);
        for (i, d) in draws.iter().enumerate() {
            if i < split { left.push(i as u64, d).unwrap() } else { right.push(i as u64, d).unwrap() }
        }
        left.merge(&right).unwrap();
        prop_assert_eq!(left.mean(), all.mean());
        prop_assert_eq!(left.second_moment(), all.second_moment());
        prop_assert_eq!(left.mean_stderr(), all.mean_stderr());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn full_model_is_linear_in_initial_field(seed in any::<u64>(), ar in -2.0f64..2.0, ai in -2.0f64..2.0) {
        let p = ModelParams::new(1.0, 1.0, 0.2, 1.0, 0.1, 0.2).unwrap();
        let u0 = gaussian_beam(make_grid(8, 6.0).unwrap(), 1.0, 1.0).unwrap();
        let a = Complex64::new(ar, ai);
        prop_assume!(a.norm() > 1e-3);
        let stream = StreamId::new(seed, 0);
        let base = solve_full(&u0, &p, 0.05, stream, &[], InitialSlope::Zero).unwrap();
        let scaled = solve_full(&u0.scaled(a), &p, 0.05, stream, &[], InitialSlope::Zero).unwrap();
        let x = base.snapshots[0].u_hat.scaled(a);
        prop_assert!(scaled.snapshots[0].u_hat.max_relative_error(&x).unwrap() <= 1e-12);
    }
}
