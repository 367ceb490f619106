mod common;

use msp_core::linalg::{from_rows, Mat};
use msp_core::lti::kalman_innovations;
use msp_core::theory::{
    self, bias_report, intermediate_bias, m_ms, m_ss, ms_bias, ms_rate, ss_bias, ss_rate,
    BiasOptConfig, McConfig,
};
use msp_core::{systems, LtiSystem};
use proptest::prelude::*;

/// Scalar matrices written out entrywise: `M_SS(i, j) = a^{i+j−2}`,
/// `M_MS(i, j) = a^{|i−j|}` and `Γ_w(i, j) = a^{i−j}` (1-based, i ≥ j).
fn scalar_oracle(a: f64, h: usize) -> (f64, f64) {
    let gamma = |i: usize, j: usize| if i >= j { a.powi((i - j) as i32) } else { 0.0 };
    let mss = |i: usize, j: usize| a.powi((i + j) as i32);
    let mms = |i: usize, j: usize| a.powi(i.abs_diff(j) as i32);
    let (mut ss, mut ms) = (0.0, 0.0);
    for r in 0..h {
        for i in 0..h {
            for j in 0..h {
                ss += gamma(r, i) * mss(i, j) * gamma(r, j);
                ms += gamma(r, i) * mms(i, j) * gamma(r, j);
            }
        }
    }
    (ss, ms)
}

#[test]
fn scalar_rates_match_written_out_matrices() {
    for a in [0.3, 0.5, 0.9] {
        let sys = systems::scalar(a, 0.0, 1.0).unwrap();
        for h in 1..=5 {
            let (ss, ms) = scalar_oracle(a, h);
            assert!((ss_rate(&sys, h).unwrap() - ss).abs() <= 1e-12 * ss.max(1.0));
            assert!((ms_rate(&sys, h).unwrap() - ms).abs() <= 1e-12 * ms.max(1.0));
            let mss = m_ss(&sys, h).unwrap();
            let mms = m_ms(&sys, h);
            for i in 0..h {
                for j in 0..h {
                    assert!((mss[(i, j)] - a.powi((i + j) as i32)).abs() < 1e-12);
                    assert!((mms[(i, j)] - a.powi(i.abs_diff(j) as i32)).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn rate_gap_is_the_additional_term() {
    let sys = systems::wellspec(0.75).unwrap();
    for h in 1..=6 {
        let gap = ms_rate(&sys, h).unwrap() - ss_rate(&sys, h).unwrap();
        let extra = m_ms(&sys, h) - m_ss(&sys, h).unwrap()
            + Mat::identity(h, h) * ((h - 1) * sys.du()) as f64;
        let r = msp_core::lti::build_rollout_wellspec(&sys, h).unwrap();
        let w = msp_core::linalg::kron(&extra, &Mat::identity(2, 2));
        let direct = (&r.gamma_w * w * r.gamma_w.transpose()).trace();
        assert!((gap - direct).abs() <= 1e-10 * direct.max(1.0));
        if h > 1 {
            assert!(gap > 0.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn rates_are_permutation_invariant(sys in common::full_system(), h in 1usize..=5) {
        let n = sys.dx();
        let perm = Mat::from_fn(n, n, |i, j| if j == (i + 1) % n { 1.0 } else { 0.0 });
        let moved = LtiSystem::fully_observed(
            &perm * sys.a() * perm.transpose(),
            &perm * sys.b(),
            &perm * sys.b_w(),
        ).unwrap();
        for f in [ss_rate, ms_rate] {
            let (x, y) = (f(&sys, h).unwrap(), f(&moved, h).unwrap());
            prop_assert!((x - y).abs() <= 1e-10 * x.max(1.0));
        }
    }

    #[test]
    fn single_step_is_the_most_efficient(sys in common::full_system(), h in 1usize..=6) {
        let ss = ss_rate(&sys, h).unwrap();
        let ms = ms_rate(&sys, h).unwrap();
        prop_assert!(ss <= ms * (1.0 + 1e-12));
        let sandwich = theory::ss_rate_sandwich(&sys, h).unwrap();
        prop_assert!((sandwich - ss).abs() <= 1e-8 * ss.max(1.0));
    }

    #[test]
    fn bias_ordering(sys in common::partial_system(), h in 1usize..=6) {
        let inn = kalman_innovations(&sys).unwrap();
        let ms = ms_bias(&inn, &sys, h).unwrap();
        let ss = ss_bias(&inn, &sys, h).unwrap();
        let cfg = BiasOptConfig { extra_starts: 1, ..Default::default() };
        let (ib, _) = intermediate_bias(&inn, &sys, h, &cfg).unwrap();
        let tol = 1e-8 * ss;
        prop_assert!(ms <= ib + tol, "ms {ms} > intermediate {ib}");
        prop_assert!(ib <= ss + tol, "intermediate {ib} > ss {ss}");
    }
}

#[test]
fn intermediate_rate_collapses_at_horizon_one() {
    let sys = systems::wellspec(0.5).unwrap();
    let cfg = McConfig { samples: 200_000, ..Default::default() };
    let ir = theory::intermediate_rate(&sys, 1, &cfg).unwrap();
    let ss = ss_rate(&sys, 1).unwrap();
    assert!((ir.rate - ss).abs() <= 3.0 * ir.stderr, "{} ± {} vs {ss}", ir.rate, ir.stderr);
}

#[test]
fn estimated_curvature_matches_metric() {
    // At the truth the residuals are independent of the derivatives, so the
    // mean Hessian is twice the excess-loss metric.
    let sys = systems::wellspec(0.75).unwrap();
    let cfg = McConfig { samples: 200_000, ..Default::default() };
    let ir = theory::intermediate_rate(&sys, 3, &cfg).unwrap();
    let w = theory::excess_loss_metric(&sys, 3).unwrap();
    let rel = (&ir.curvature - &w * 2.0).norm() / (w.norm() * 2.0);
    assert!(rel < 0.05, "{rel}");
}

#[test]
fn jordan_example_bias_gap_grows() {
    let sys = systems::jordan_example().unwrap();
    let inn = kalman_innovations(&sys).unwrap();
    let gaps: Vec<f64> = (1..=15)
        .map(|h| ss_bias(&inn, &sys, h).unwrap() - ms_bias(&inn, &sys, h).unwrap())
        .collect();
    assert!(gaps[0].abs() < 1e-9);
    for w in gaps[1..].windows(2) {
        assert!(w[0] > 0.0 && w[1] > w[0]);
    }
}

#[test]
fn bias_report_for_benchmarks() {
    for a in [0.5, 0.75, 0.9] {
        let sys = systems::misspec(a).unwrap();
        let report = bias_report(&sys, 5, &BiasOptConfig::default()).unwrap();
        assert!(report.ordering_holds(), "{report:?}");
        assert!(report.ms_bias < report.ss_bias);
        assert!(report.predictor_spectral_radius < 1.0);
    }
}

#[test]
fn memoryless_spectral_radius_is_zero() {
    let sys = LtiSystem::new(
        Mat::zeros(1, 1),
        Mat::zeros(1, 0),
        Mat::identity(1, 1),
        from_rows(&[&[1.0]]),
        from_rows(&[&[1.0]]),
    )
    .unwrap();
    let inn = kalman_innovations(&sys).unwrap();
    assert_eq!(theory::predictor_spectral_radius(&inn, &sys).unwrap(), 0.0);
}
