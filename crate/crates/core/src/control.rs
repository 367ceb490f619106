//! Model predictive control gains synthesized from multi-step predictors and
//! their exact closed-loop evaluation.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{spectral_radius, Mat};
use crate::lti::{build_rollout_wellspec, simulate, solve_dlyap, LtiSystem};
use crate::predictors::{
    fit_intermediate, fit_multi_step, fit_single_step, Dataset, OptimizerConfig, Predictor,
    PredictorClass,
};
use crate::rng;

/// Default clipping level for the infinite-horizon cost.
pub const DEFAULT_CLIP: f64 = 1e3;

#[derive(Debug, Clone, PartialEq)]
pub struct MpcGain {
    /// `H d_u × d_y` plan `U = K_H y`.
    pub k_h: Mat,
    /// First `d_u` rows of `K_H`, applied as `u_t = K y_t`.
    pub k: Mat,
    pub class: PredictorClass,
    pub horizon: usize,
}

/// Minimizer of `‖G_{y0} y + G_U U‖² + ‖U‖²` over the input plan `U`:
/// `K_H = −(G_Uᵀ G_U + I)⁻¹ G_Uᵀ G_{y0}`.
pub fn mpc_gain(pred: &Predictor) -> Result<MpcGain> {
    let (dy, du, h) = (pred.dy(), pred.du(), pred.horizon());
    if du == 0 {
        return Err(Error::arg("an MPC gain needs at least one input channel"));
    }
    let g = pred.g();
    let g_y0 = g.columns(0, dy);
    let g_u = g.columns(dy, h * du);
    let gram = g_u.transpose() * g_u + Mat::identity(h * du, h * du);
    let chol = gram
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("regularized input Gram matrix"))?;
    let k_h = -chol.solve(&(g_u.transpose() * g_y0));
    let k = k_h.rows(0, du).into_owned();
    Ok(MpcGain {
        k_h,
        k,
        class: pred.class(),
        horizon: h,
    })
}

/// Gain computed from the true multi-step map of a fully observed system.
pub fn exact_gain(system: &LtiSystem, horizon: usize) -> Result<MpcGain> {
    let rollout = build_rollout_wellspec(system, horizon)?;
    let pred = Predictor::multi_step(rollout.g_star, horizon, system.dy())?;
    mpc_gain(&pred)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlReport {
    pub closed_loop_spectral_radius: f64,
    /// Stationary `E[yᵀy + uᵀu]`; infinite for unstable loops.
    pub avg_stage_cost: f64,
    pub clipped_cost: f64,
    pub clip: f64,
}

/// `−log(exp(−J) + exp(−M))`, evaluated without overflow. Infinite `J`
/// gives exactly `M`.
pub fn clipped_cost(j: f64, m: f64) -> f64 {
    if j == f64::INFINITY {
        return m;
    }
    j.min(m) - (-(j - m).abs()).exp().ln_1p()
}

/// Closed loop `x_{t+1} = (A + B K C) x_t + B_w w_t + B K D_v v_t` under
/// `u_t = K y_t`.
pub fn closed_loop_eval(system: &LtiSystem, gain: &MpcGain, clip: f64) -> Result<ControlReport> {
    let k = &gain.k;
    if k.shape() != (system.du(), system.dy()) {
        return Err(Error::dim(format!(
            "gain of shape {:?} does not fit (d_u, d_y) = ({}, {})",
            k.shape(),
            system.du(),
            system.dy()
        )));
    }
    let (a, b, c) = (system.a(), system.b(), system.c());
    let acl = a + b * k * c;
    let rho = spectral_radius(&acl)?;
    if rho >= 1.0 {
        return Ok(ControlReport {
            closed_loop_spectral_radius: rho,
            avg_stage_cost: f64::INFINITY,
            clipped_cost: clip,
            clip,
        });
    }
    let r = system.d_v() * system.d_v().transpose();
    let bk = b * k;
    let drive = system.b_w() * system.b_w().transpose() + &bk * &r * bk.transpose();
    let sigma = solve_dlyap(&acl, &crate::linalg::symmetrize(&drive))?;
    let sigma_y = c * sigma * c.transpose() + r;
    let cost = sigma_y.trace() + (k * &sigma_y * k.transpose()).trace();
    Ok(ControlReport {
        closed_loop_spectral_radius: rho,
        avg_stage_cost: cost,
        clipped_cost: clipped_cost(cost, clip),
        clip,
    })
}

/// Fitted predictors of all three classes from one dataset, in the order
/// single-step, multi-step, intermediate (initialized at single-step).
pub fn fit_all(data: &Dataset, horizon: usize, cfg: &OptimizerConfig) -> Vec<(PredictorClass, Result<Predictor>)> {
    let ss = fit_single_step(data, horizon).map(|f| f.predictor);
    let ms = fit_multi_step(data, horizon).map(|f| f.predictor);
    let intermediate = match &ss {
        Ok(p) => {
            let (gy, gu) = p.generator().expect("single-step fits are rollouts");
            fit_intermediate(data, horizon, Some((gy, gu)), cfg).map(|f| f.predictor)
        }
        Err(e) => Err(e.clone()),
    };
    vec![
        (PredictorClass::SingleStep, ss),
        (PredictorClass::MultiStep, ms),
        (PredictorClass::Intermediate, intermediate),
    ]
}

/// Simulates one training rollout, fits all classes and evaluates the
/// resulting closed loops.
pub fn stabilization_replica(
    system: &LtiSystem,
    horizon: usize,
    n: usize,
    seed: u64,
    cfg: &OptimizerConfig,
    clip: f64,
) -> Result<ReplicaReports> {
    let data = Dataset::from_trajectory(&simulate(system, n, seed)?);
    Ok(fit_all(&data, horizon, cfg)
        .into_iter()
        .map(|(class, pred)| {
            let report = pred
                .and_then(|p| mpc_gain(&p))
                .and_then(|g| closed_loop_eval(system, &g, clip));
            (class, report)
        })
        .collect())
}

/// Closed-loop reports of one replica, one entry per predictor class.
pub type ReplicaReports = Vec<(PredictorClass, Result<ControlReport>)>;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub class: PredictorClass,
    pub n: usize,
    pub mean_spectral_radius: f64,
    pub mean_clipped_cost: f64,
    pub successes: usize,
    pub failures: usize,
}

/// Mean closed-loop spectral radius and clipped cost per `(class, N)` over
/// `replicas` independent datasets. Replica seeds are derived from
/// `(seed, N, replica)`, so results do not depend on thread scheduling.
pub fn stabilization_sweep(
    system: &LtiSystem,
    horizon: usize,
    dataset_sizes: &[usize],
    replicas: usize,
    seed: u64,
    cfg: &OptimizerConfig,
) -> Result<Vec<SweepPoint>> {
    let mut points = Vec::new();
    for &n in dataset_sizes {
        let runs: Vec<Result<ReplicaReports>> = (0..replicas)
            .into_par_iter()
            .map(|r| {
                let s = rng::derive_seed(seed, &[n as u64, r as u64]);
                stabilization_replica(system, horizon, n, s, cfg, DEFAULT_CLIP)
            })
            .collect();
        for class in PredictorClass::ALL {
            let (mut rho, mut cost, mut ok, mut failed) = (0.0, 0.0, 0, 0);
            for run in &runs {
                let report = run
                    .as_ref()
                    .ok()
                    .and_then(|v| v.iter().find(|(c, _)| *c == class))
                    .and_then(|(_, r)| r.as_ref().ok());
                match report {
                    Some(rep) => {
                        rho += rep.closed_loop_spectral_radius;
                        cost += rep.clipped_cost;
                        ok += 1;
                    }
                    None => failed += 1,
                }
            }
            let denom = ok.max(1) as f64;
            points.push(SweepPoint {
                class,
                n,
                mean_spectral_radius: rho / denom,
                mean_clipped_cost: cost / denom,
                successes: ok,
                failures: failed,
            });
        }
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::from_rows;
    use crate::systems;

    #[test]
    fn scalar_gain_by_hand() {
        let pred = Predictor::multi_step(from_rows(&[&[0.5, 1.0]]), 1, 1).unwrap();
        let g = mpc_gain(&pred).unwrap();
        assert!((g.k[(0, 0)] + 0.25).abs() < 1e-15);
    }

    #[test]
    fn no_authority_means_no_gain() {
        let g_star = from_rows(&[&[0.5, 0.0, 0.0], &[0.25, 0.0, 0.0]]);
        let pred = Predictor::multi_step(g_star, 2, 1).unwrap();
        let g = mpc_gain(&pred).unwrap();
        assert_eq!(g.k_h.norm(), 0.0);
    }

    #[test]
    fn zero_gain_cost_is_state_energy() {
        let sys = systems::wellspec(0.5).unwrap();
        let gain = MpcGain {
            k_h: Mat::zeros(1, 2),
            k: Mat::zeros(1, 2),
            class: PredictorClass::MultiStep,
            horizon: 1,
        };
        let rep = closed_loop_eval(&sys, &gain, DEFAULT_CLIP).unwrap();
        let sigma = solve_dlyap(sys.a(), &(sys.b_w() * sys.b_w().transpose())).unwrap();
        assert!((rep.avg_stage_cost - sigma.trace()).abs() < 1e-12);
        assert!((rep.clipped_cost - rep.avg_stage_cost).abs() < 1e-6);
    }

    #[test]
    fn destabilizing_gain_costs_the_clip() {
        let sys = systems::scalar(0.5, 1.0, 1.0).unwrap();
        let gain = MpcGain {
            k_h: from_rows(&[&[2.0]]),
            k: from_rows(&[&[2.0]]),
            class: PredictorClass::SingleStep,
            horizon: 1,
        };
        let rep = closed_loop_eval(&sys, &gain, 50.0).unwrap();
        assert!(rep.closed_loop_spectral_radius >= 1.0);
        assert_eq!(rep.clipped_cost, 50.0);
        assert!(rep.avg_stage_cost.is_infinite());
    }

    #[test]
    fn clipping_is_monotone_and_saturates() {
        let m = 1e3;
        let mut prev = clipped_cost(0.0, m);
        for i in 1..=3000 {
            let v = clipped_cost(i as f64, m);
            assert!(v >= prev);
            assert!(v <= m);
            prev = v;
        }
        assert!((clipped_cost(5.0, m) - 5.0).abs() < 1e-12);
        assert!((clipped_cost(1e300, m) - m).abs() < 1e-12);
    }

    #[test]
    fn exact_gain_stabilizes_wellspec() {
        let sys = systems::wellspec(0.9).unwrap();
        let gain = exact_gain(&sys, 20).unwrap();
        let rep = closed_loop_eval(&sys, &gain, DEFAULT_CLIP).unwrap();
        assert!(rep.closed_loop_spectral_radius < 1.0);
    }
}
