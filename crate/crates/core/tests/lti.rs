mod common;

use msp_core::linalg::{from_rows, powers, spectral_radius, Mat};
use msp_core::lti::{
    build_rollout_misspec, build_rollout_wellspec, kalman_innovations, riccati_residual, simulate,
    solve_dlyap,
};
use msp_core::{systems, theory, LtiSystem};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn lyapunov_residual_is_small(entries in prop::collection::vec(-1.0f64..1.0, 16), q in prop::collection::vec(-1.0f64..1.0, 16), n in 1usize..=4) {
        let a = common::stable_matrix(n, &entries);
        let root = Mat::from_column_slice(n, n, &q[..n * n]);
        let q = &root * root.transpose();
        let p = solve_dlyap(&a, &q).unwrap();
        let residual = (&p - &a * &p * a.transpose() - &q).norm();
        prop_assert!(residual <= 1e-10 * q.norm().max(1.0));
        prop_assert_eq!(&p, &p.transpose());
    }

    #[test]
    fn innovations_form_invariants(sys in common::partial_system()) {
        let inn = kalman_innovations(&sys).unwrap();
        let (a, c) = (sys.a(), sys.c());
        let q = sys.b_w() * sys.b_w().transpose();
        let r = sys.d_v() * sys.d_v().transpose();
        prop_assert!(riccati_residual(a, c, &q, &r, &inn.s) <= 1e-10);
        let innov_cov = c * &inn.s * c.transpose() + &r;
        prop_assert!((&inn.d_e * &inn.d_e - innov_cov).norm() <= 1e-10);
        prop_assert!(spectral_radius(&(a - &inn.k * c)).unwrap() < 1.0);
        let drive = &inn.k * &inn.d_e * inn.d_e.transpose() * inn.k.transpose();
        let lyap = &inn.sigma_xhat - a * &inn.sigma_xhat * a.transpose() - drive;
        prop_assert!(lyap.norm() <= 1e-10);
        let sy = c * &inn.sigma_xhat * c.transpose() + &inn.d_e * inn.d_e.transpose();
        prop_assert!((&inn.sigma_y - sy).norm() <= 1e-10);
    }

    #[test]
    fn one_step_limit_has_radius_at_most_one(sys in common::partial_system()) {
        let inn = kalman_innovations(&sys).unwrap();
        prop_assert!(theory::predictor_spectral_radius(&inn, &sys).unwrap() <= 1.0 + 1e-8);
    }

    #[test]
    fn cross_covariance_identity(sys in common::partial_system(), h in 1usize..=6) {
        // Φ Σ_x̂ Cᵀ + G* Σ_y stacks E[y_{t+k} y_tᵀ] = C A^k Σ_x Cᵀ.
        let inn = kalman_innovations(&sys).unwrap();
        let r = build_rollout_misspec(&inn, &sys, h).unwrap();
        let lhs = &r.phi * &inn.sigma_xhat * sys.c().transpose() + &r.g_star * &inn.sigma_y;
        let sigma_x = sys.state_covariance().unwrap();
        let pw = powers(sys.a(), h);
        let dy = sys.dy();
        for k in 1..=h {
            let expect = sys.c() * &pw[k] * &sigma_x * sys.c().transpose();
            let block = lhs.view(((k - 1) * dy, 0), (dy, dy)).into_owned();
            prop_assert!((block - expect).norm() <= 1e-8 * sigma_x.norm().max(1.0));
        }
    }

    #[test]
    fn rollout_reproduces_noise_free_simulation(sys in common::full_system(), h in 1usize..=6, seed in any::<u64>()) {
        let quiet = sys.with_noise_map(Mat::zeros(sys.dx(), sys.dw())).unwrap();
        // Inputs excite the state; without process noise the rollout map is exact.
        let traj = simulate(&quiet, 40, seed).unwrap();
        let g = build_rollout_wellspec(&sys, h).unwrap().g_star;
        let (dx, du) = (sys.dx(), sys.du());
        for t in 1..=(40 - h) {
            let mut z = Mat::zeros(dx + h * du, 1);
            z.view_mut((0, 0), (dx, 1)).copy_from(&traj.states.column(t));
            for k in 0..h {
                z.view_mut((dx + k * du, 0), (du, 1)).copy_from(&traj.inputs.column(t - 1 + k));
            }
            let pred = &g * z;
            for k in 1..=h {
                let err = (pred.view(((k - 1) * dx, 0), (dx, 1)) - traj.states.column(t + k)).norm();
                prop_assert!(err <= 1e-12 * traj.states.column(t + k).norm().max(1.0));
            }
        }
    }

    #[test]
    fn simulation_is_deterministic(seed in any::<u64>()) {
        let sys = systems::misspec(0.75).unwrap();
        let a = simulate(&sys, 200, seed).unwrap();
        let b = simulate(&sys, 200, seed).unwrap();
        prop_assert_eq!(&a, &b);
        let c = simulate(&sys, 200, seed.wrapping_add(1)).unwrap();
        prop_assert_ne!(a.observations, c.observations);
    }
}

#[test]
fn inputs_are_observed_one_step_later() {
    // In a fully observed system, y_t = x_t and the recorded u_t drives x_{t+1}.
    let sys = systems::scalar(0.5, 1.0, 0.0).unwrap();
    let traj = simulate(&sys, 10, 3).unwrap();
    for t in 1..10 {
        let expect = 0.5 * traj.observations[(0, t - 1)] + traj.inputs[(0, t - 1)];
        assert!((traj.observations[(0, t)] - expect).abs() < 1e-15);
    }
    assert_eq!(traj.observations[(0, 0)], 0.0);
}

#[test]
fn jordan_example_radius() {
    let sys = systems::jordan_example().unwrap();
    assert!((spectral_radius(sys.a()).unwrap() - 0.9).abs() < 1e-6);
    let inn = kalman_innovations(&sys).unwrap();
    let rho = theory::predictor_spectral_radius(&inn, &sys).unwrap();
    assert!((rho - 0.99).abs() <= 0.005, "{rho}");
}

#[test]
fn output_cross_covariance_matches_monte_carlo() {
    let sys = systems::misspec(0.5).unwrap();
    let inn = kalman_innovations(&sys).unwrap();
    let n = 1_000_000;
    let traj = simulate(&sys, n, 21).unwrap();
    let y = traj.observations.row(0);
    for lag in 0..=3 {
        let est: f64 = (0..n - lag).map(|t| y[t] * y[t + lag]).sum::<f64>() / (n - lag) as f64;
        let exact = inn.output_cross_covariance(&sys, lag)[(0, 0)];
        assert!((est - exact).abs() <= 0.03 * inn.sigma_y[(0, 0)], "lag {lag}: {est} vs {exact}");
    }
}

#[test]
fn misspec_rollout_base_case() {
    let sys = systems::misspec(0.75).unwrap();
    let inn = kalman_innovations(&sys).unwrap();
    let r = build_rollout_misspec(&inn, &sys, 1).unwrap();
    assert!((&r.phi - sys.c() * (sys.a() - &inn.k * sys.c())).norm() < 1e-15);
    assert!((&r.g_star - sys.c() * &inn.k).norm() < 1e-15);
    assert_eq!(r.gamma_e, inn.d_e);
}

#[test]
fn wellspec_rollout_single_step() {
    let sys = systems::wellspec(0.5).unwrap();
    let r = build_rollout_wellspec(&sys, 1).unwrap();
    let mut ab = Mat::zeros(2, 3);
    ab.view_mut((0, 0), (2, 2)).copy_from(sys.a());
    ab.view_mut((0, 2), (2, 1)).copy_from(sys.b());
    assert_eq!(r.g_star, ab);
    assert_eq!(&r.gamma_w, sys.b_w());
    let r3 = build_rollout_wellspec(&sys, 3).unwrap();
    // Block row 3: [A³, A² B, A B, B].
    let a = sys.a();
    let row = r3.g_star.view((4, 0), (2, 5)).into_owned();
    assert!((row.view((0, 0), (2, 2)) - a * a * a).norm() < 1e-15);
    assert!((row.view((0, 2), (2, 1)) - a * a * sys.b()).norm() < 1e-15);
    assert!((row.view((0, 4), (2, 1)) - sys.b()).norm() < 1e-15);
}

#[test]
fn rejects_inconsistent_systems() {
    let bad = LtiSystem::new(
        from_rows(&[&[0.5]]),
        Mat::zeros(1, 0),
        Mat::identity(1, 1),
        from_rows(&[&[1.0, 0.0]]),
        Mat::zeros(1, 0),
    );
    assert!(bad.is_err());
}
