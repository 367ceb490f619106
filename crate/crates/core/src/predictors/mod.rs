//! Single-step, multi-step and intermediate predictors and their losses.
//!
//! Every predictor is a matrix `G` mapping the regressor
//! `z_t = [y_t; u_t; ...; u_{t+H-1}]` to the stacked forecast of
//! `y_{t+1}, ..., y_{t+H}`.

pub mod lstsq;
pub mod optim;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::{frobenius_sq, Mat};
use crate::lti::{
    build_rollout_misspec, build_rollout_wellspec, stationary_regressor_cov, InnovationsForm,
    LtiSystem, Trajectory,
};

pub use lstsq::{lstsq, LstsqSolution, MAX_REGRESSOR_CONDITION};
pub use optim::{
    compose, minimize_structured, rollout_jacobian, structured_value_and_gradient, OptimizerConfig,
    OptimizerDiagnostics, QuadraticObjective, StructuredOptimum,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PredictorClass {
    SingleStep,
    MultiStep,
    Intermediate,
}

impl PredictorClass {
    pub const ALL: [PredictorClass; 3] = [
        PredictorClass::SingleStep,
        PredictorClass::MultiStep,
        PredictorClass::Intermediate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PredictorClass::SingleStep => "ss",
            PredictorClass::MultiStep => "ms",
            PredictorClass::Intermediate => "intermediate",
        }
    }
}

impl fmt::Display for PredictorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PredictorClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ss" => Ok(PredictorClass::SingleStep),
            "ms" => Ok(PredictorClass::MultiStep),
            "intermediate" => Ok(PredictorClass::Intermediate),
            other => Err(Error::arg(format!("unknown predictor class `{other}`"))),
        }
    }
}

/// One training rollout: column `t - 1` holds `y_t` and `u_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    observations: Mat,
    inputs: Mat,
    seed: u64,
}

const CHUNK: usize = 4096;

impl Dataset {
    pub fn new(observations: Mat, inputs: Mat, seed: u64) -> Result<Self> {
        if observations.ncols() != inputs.ncols() {
            return Err(Error::dim(format!(
                "{} observations but {} inputs",
                observations.ncols(),
                inputs.ncols()
            )));
        }
        if observations.nrows() == 0 {
            return Err(Error::dim("observations must have at least one channel"));
        }
        Ok(Self {
            observations,
            inputs,
            seed,
        })
    }

    /// Observations only; the regressor carries no inputs.
    pub fn autonomous(observations: Mat, seed: u64) -> Result<Self> {
        let n = observations.ncols();
        Self::new(observations, Mat::zeros(0, n), seed)
    }

    pub fn from_trajectory(traj: &Trajectory) -> Self {
        Self {
            observations: traj.observations.clone(),
            inputs: traj.inputs.clone(),
            seed: traj.seed,
        }
    }

    pub fn observations(&self) -> &Mat {
        &self.observations
    }
    pub fn inputs(&self) -> &Mat {
        &self.inputs
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn len(&self) -> usize {
        self.observations.ncols()
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn dy(&self) -> usize {
        self.observations.nrows()
    }
    pub fn du(&self) -> usize {
        self.inputs.nrows()
    }

    /// Number of `H`-step windows `t = 1..N-H`.
    pub fn windows(&self, horizon: usize) -> Result<usize> {
        if horizon == 0 {
            return Err(Error::arg("horizon must be at least 1"));
        }
        if self.len() <= horizon {
            return Err(Error::arg(format!(
                "{} samples cannot form a window of horizon {horizon}",
                self.len()
            )));
        }
        Ok(self.len() - horizon)
    }

    /// Regressor rows `z_sᵀ` and target rows `y_{s+1:s+H}ᵀ` for windows
    /// `start..start + count` (0-based).
    fn design_rows(&self, horizon: usize, start: usize, count: usize) -> (Mat, Mat) {
        let (dy, du) = (self.dy(), self.du());
        let mut z = Mat::zeros(count, dy + horizon * du);
        let mut y = Mat::zeros(count, horizon * dy);
        for r in 0..count {
            let s = start + r;
            for i in 0..dy {
                z[(r, i)] = self.observations[(i, s)];
            }
            for k in 0..horizon {
                for j in 0..du {
                    z[(r, dy + k * du + j)] = self.inputs[(j, s + k)];
                }
                for i in 0..dy {
                    y[(r, k * dy + i)] = self.observations[(i, s + k + 1)];
                }
            }
        }
        (z, y)
    }

    /// Full regressor matrix `Z` (windows × regressors) and target matrix `Y`.
    pub fn design(&self, horizon: usize) -> Result<(Mat, Mat)> {
        let n = self.windows(horizon)?;
        Ok(self.design_rows(horizon, 0, n))
    }

    fn for_each_chunk(&self, horizon: usize, mut f: impl FnMut(&Mat, &Mat)) -> Result<usize> {
        let n = self.windows(horizon)?;
        let mut start = 0;
        while start < n {
            let count = CHUNK.min(n - start);
            let (z, y) = self.design_rows(horizon, start, count);
            f(&z, &y);
            start += count;
        }
        Ok(n)
    }
}

/// A multi-step predictor. Single-step and intermediate predictors keep
/// the pair `(G_y, G_u)` they are rolled out from, and `G` is always the
/// rollout of that pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    g: Mat,
    horizon: usize,
    class: PredictorClass,
    generator: Option<(Mat, Mat)>,
    dy: usize,
}

impl Predictor {
    /// An unconstrained multi-step predictor.
    pub fn multi_step(g: Mat, horizon: usize, dy: usize) -> Result<Self> {
        if horizon == 0 || dy == 0 {
            return Err(Error::arg("horizon and d_y must be positive"));
        }
        let extra = g.ncols().checked_sub(dy);
        if g.nrows() != horizon * dy || extra.is_none_or(|e| e % horizon != 0) {
            return Err(Error::dim(format!(
                "predictor of shape {:?} does not fit horizon {horizon} and d_y {dy}",
                g.shape()
            )));
        }
        Ok(Self {
            g,
            horizon,
            class: PredictorClass::MultiStep,
            generator: None,
            dy,
        })
    }

    /// Rollout of `(G_y, G_u)` over `horizon` steps.
    pub fn rollout(gy: Mat, gu: Mat, horizon: usize, class: PredictorClass) -> Result<Self> {
        if class == PredictorClass::MultiStep {
            return Err(Error::arg("multi-step predictors are not rollouts"));
        }
        if horizon == 0 {
            return Err(Error::arg("horizon must be at least 1"));
        }
        if !gy.is_square() || gy.nrows() == 0 || gu.nrows() != gy.nrows() {
            return Err(Error::dim(format!(
                "G_y {:?} and G_u {:?} are inconsistent",
                gy.shape(),
                gu.shape()
            )));
        }
        let g = compose(&gy, &gu, horizon);
        let dy = gy.nrows();
        Ok(Self {
            g,
            horizon,
            class,
            generator: Some((gy, gu)),
            dy,
        })
    }

    pub fn g(&self) -> &Mat {
        &self.g
    }
    pub fn horizon(&self) -> usize {
        self.horizon
    }
    pub fn class(&self) -> PredictorClass {
        self.class
    }
    pub fn generator(&self) -> Option<(&Mat, &Mat)> {
        self.generator.as_ref().map(|(a, b)| (a, b))
    }
    pub fn dy(&self) -> usize {
        self.dy
    }
    pub fn du(&self) -> usize {
        (self.g.ncols() - self.dy) / self.horizon
    }

    /// The same predictor under a different class tag.
    pub fn relabel(mut self, class: PredictorClass) -> Result<Self> {
        if (class == PredictorClass::MultiStep) != self.generator.is_none() {
            return Err(Error::arg("class tag must agree with the rollout structure"));
        }
        self.class = class;
        Ok(self)
    }

    /// Rolled out over a different horizon; only rollout predictors can be
    /// extended.
    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        match &self.generator {
            Some((gy, gu)) => Self::rollout(gy.clone(), gu.clone(), horizon, self.class),
            None => Err(Error::arg("multi-step predictors have a fixed horizon")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub predictor: Predictor,
    /// Number of regression windows used.
    pub samples: usize,
    /// Condition number of the regressor Gram matrix for least-squares fits.
    pub gram_condition: Option<f64>,
    pub diagnostics: Option<OptimizerDiagnostics>,
}

/// One-step least squares over `t = 1..N-1`, rolled out to `horizon` steps.
pub fn fit_single_step(data: &Dataset, horizon: usize) -> Result<FitReport> {
    if data.len() < 2 {
        return Err(Error::arg("single-step fit needs at least two samples"));
    }
    let (z, y) = data.design(1)?;
    let sol = lstsq(&z, &y)?;
    let theta = sol.coefficients.transpose();
    let dy = data.dy();
    let gy = theta.columns(0, dy).into_owned();
    let gu = theta.columns(dy, data.du()).into_owned();
    Ok(FitReport {
        predictor: rollout_composition(gy, gu, horizon)?,
        samples: z.nrows(),
        gram_condition: Some(sol.gram_condition),
        diagnostics: None,
    })
}

/// Single-step predictor for `(G_y, G_u)` rolled out over `horizon` steps.
pub fn rollout_composition(gy: Mat, gu: Mat, horizon: usize) -> Result<Predictor> {
    Predictor::rollout(gy, gu, horizon, PredictorClass::SingleStep)
}

/// Unconstrained least squares over windows `t = 1..N-H`.
pub fn fit_multi_step(data: &Dataset, horizon: usize) -> Result<FitReport> {
    let (z, y) = data.design(horizon)?;
    let sol = lstsq(&z, &y)?;
    Ok(FitReport {
        predictor: Predictor::multi_step(sol.coefficients.transpose(), horizon, data.dy())?,
        samples: z.nrows(),
        gram_condition: Some(sol.gram_condition),
        diagnostics: None,
    })
}

/// Sample moments of the `H`-step windows, normalized by the window count.
pub fn empirical_objective(data: &Dataset, horizon: usize) -> Result<QuadraticObjective> {
    let p_dim = data.dy() + horizon * data.du();
    let mut q = Mat::zeros(p_dim, p_dim);
    let mut p = Mat::zeros(horizon * data.dy(), p_dim);
    let mut c = 0.0;
    let n = data.for_each_chunk(horizon, |z, y| {
        q += z.tr_mul(z);
        p += y.tr_mul(z);
        c += frobenius_sq(y);
    })?;
    let scale = 1.0 / n as f64;
    QuadraticObjective::new(q * scale, p * scale, c * scale, horizon, data.dy(), data.du())
}

/// Rollout-structured minimizer of the empirical multi-step loss, started
/// from `init` or from the single-step fit when no start is given.
pub fn fit_intermediate(
    data: &Dataset,
    horizon: usize,
    init: Option<(&Mat, &Mat)>,
    cfg: &OptimizerConfig,
) -> Result<FitReport> {
    let obj = empirical_objective(data, horizon)?;
    let (gy0, gu0) = match init {
        Some((gy, gu)) => (gy.clone(), gu.clone()),
        None => {
            let ss = fit_single_step(data, 1)?;
            let (gy, gu) = ss.predictor.generator().expect("single-step fits are rollouts");
            (gy.clone(), gu.clone())
        }
    };
    let opt = minimize_structured(&obj, &gy0, &gu0, cfg)?;
    Ok(FitReport {
        predictor: Predictor::rollout(opt.gy, opt.gu, horizon, PredictorClass::Intermediate)?,
        samples: data.windows(horizon)?,
        gram_condition: None,
        diagnostics: Some(opt.diagnostics),
    })
}

fn check_shapes(pred: &Predictor, data: &Dataset) -> Result<()> {
    if pred.dy() != data.dy() || pred.du() != data.du() {
        return Err(Error::dim(format!(
            "predictor for (d_y, d_u) = ({}, {}) applied to data with ({}, {})",
            pred.dy(),
            pred.du(),
            data.dy(),
            data.du()
        )));
    }
    Ok(())
}

/// Mean over windows `t = 1..N-H` of `‖y_{t+1:t+H} − G z_t‖²`.
pub fn empirical_loss(pred: &Predictor, data: &Dataset) -> Result<f64> {
    check_shapes(pred, data)?;
    let gt = pred.g().transpose();
    let mut total = 0.0;
    let n = data.for_each_chunk(pred.horizon(), |z, y| {
        total += frobenius_sq(&(y - z * &gt));
    })?;
    Ok(total / n as f64)
}

/// `‖(G − G*) Σ_z^{1/2}‖_F² + ‖Γ_w‖_F²` for a fully observed system.
pub fn population_loss_wellspec(pred: &Predictor, system: &LtiSystem) -> Result<f64> {
    let h = pred.horizon();
    let rollout = build_rollout_wellspec(system, h)?;
    if pred.g().shape() != rollout.g_star.shape() {
        return Err(Error::dim("predictor does not match the system dimensions"));
    }
    let sigma_z = stationary_regressor_cov(system, h)?;
    let delta = pred.g() - &rollout.g_star;
    Ok((&delta * sigma_z).dot(&delta) + frobenius_sq(&rollout.gamma_w))
}

/// Stationary moments of the misspecified output process, as a quadratic
/// objective in `G` (`Q = Σ_y`, `P = E[y_{t+1:t+H} y_tᵀ]`).
pub fn population_objective_misspec(
    innov: &InnovationsForm,
    system: &LtiSystem,
    horizon: usize,
) -> Result<QuadraticObjective> {
    let r = build_rollout_misspec(innov, system, horizon)?;
    let c = system.c();
    let p = &r.phi * &innov.sigma_xhat * c.transpose() + &r.g_star * &innov.sigma_y;
    let zero = Mat::zeros(horizon * system.dy(), system.dy());
    let value_at_zero = misspec_loss_from(&r, innov, system, &zero);
    QuadraticObjective::new(
        innov.sigma_y.clone(),
        p,
        value_at_zero,
        horizon,
        system.dy(),
        0,
    )
}

fn misspec_loss_from(
    r: &crate::lti::MisspecRollout,
    innov: &InnovationsForm,
    system: &LtiSystem,
    g: &Mat,
) -> f64 {
    let gap = &r.g_star - g;
    let state = &r.phi + &gap * system.c();
    (&state * &innov.sigma_xhat).dot(&state)
        + frobenius_sq(&(&gap * &innov.d_e))
        + frobenius_sq(&r.gamma_e)
}

/// `‖(Φ + (G* − G) C) Σ_x̂^{1/2}‖_F² + ‖(G* − G) D_e‖_F² + ‖Γ_e‖_F²`.
pub fn population_loss_misspec(
    pred: &Predictor,
    innov: &InnovationsForm,
    system: &LtiSystem,
) -> Result<f64> {
    if pred.du() != 0 {
        return Err(Error::arg("misspecified population loss is defined without inputs"));
    }
    let r = build_rollout_misspec(innov, system, pred.horizon())?;
    if pred.g().shape() != r.g_star.shape() {
        return Err(Error::dim("predictor does not match the system dimensions"));
    }
    Ok(misspec_loss_from(&r, innov, system, pred.g()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::from_rows;
    use crate::lti::simulate;
    use crate::systems;

    fn noiseless_scalar(n: usize) -> Dataset {
        // y_{t+1} = 0.5 y_t + u_t with deterministic but exciting inputs.
        let mut y = vec![1.0];
        let u: Vec<f64> = (0..n).map(|t| ((t * 7919) % 13) as f64 - 6.0).collect();
        for t in 0..n - 1 {
            y.push(0.5 * y[t] + u[t]);
        }
        Dataset::new(Mat::from_row_slice(1, n, &y), Mat::from_row_slice(1, n, &u), 0).unwrap()
    }

    #[test]
    fn single_step_recovers_noiseless_dynamics() {
        let fit = fit_single_step(&noiseless_scalar(50), 1).unwrap();
        let (gy, gu) = fit.predictor.generator().unwrap();
        assert!((gy[(0, 0)] - 0.5).abs() < 1e-10);
        assert!((gu[(0, 0)] - 1.0).abs() < 1e-10);
        assert_eq!(fit.samples, 49);
    }

    #[test]
    fn single_pair_is_min_norm() {
        let data = Dataset::new(
            from_rows(&[&[2.0, 1.0]]),
            from_rows(&[&[0.0, 0.0]]),
            0,
        )
        .unwrap();
        let fit = fit_single_step(&data, 1).unwrap();
        let (gy, gu) = fit.predictor.generator().unwrap();
        assert!((gy[(0, 0)] - 0.5).abs() < 1e-15);
        assert_eq!(gu[(0, 0)], 0.0);
    }

    #[test]
    fn composition_examples() {
        let p = rollout_composition(from_rows(&[&[0.5]]), from_rows(&[&[1.0]]), 3).unwrap();
        let first: Vec<f64> = p.g().column(0).iter().cloned().collect();
        assert_eq!(first, vec![0.5, 0.25, 0.125]);
        let p = rollout_composition(Mat::zeros(1, 1), from_rows(&[&[2.0]]), 3).unwrap();
        assert_eq!(
            p.g().clone(),
            from_rows(&[&[0.0, 2.0, 0.0, 0.0], &[0.0, 0.0, 2.0, 0.0], &[0.0, 0.0, 0.0, 2.0]])
        );
    }

    #[test]
    fn multi_step_at_horizon_one_matches_single_step() {
        let sys = systems::wellspec(0.5).unwrap();
        let data = Dataset::from_trajectory(&simulate(&sys, 200, 3).unwrap());
        let ss = fit_single_step(&data, 1).unwrap();
        let ms = fit_multi_step(&data, 1).unwrap();
        assert!((ss.predictor.g() - ms.predictor.g()).norm() < 1e-12);
    }

    #[test]
    fn zero_predictor_loss_is_mean_target_energy() {
        let data = noiseless_scalar(20);
        let pred = Predictor::multi_step(Mat::zeros(2, 3), 2, 1).unwrap();
        let loss = empirical_loss(&pred, &data).unwrap();
        let y = data.observations();
        let expect = (0..18)
            .map(|s| y[(0, s + 1)].powi(2) + y[(0, s + 2)].powi(2))
            .sum::<f64>()
            / 18.0;
        assert!((loss - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn objective_matches_direct_loss() {
        let sys = systems::wellspec(0.75).unwrap();
        let data = Dataset::from_trajectory(&simulate(&sys, 10_000, 5).unwrap());
        let pred = fit_single_step(&data, 4).unwrap().predictor;
        let obj = empirical_objective(&data, 4).unwrap();
        let direct = empirical_loss(&pred, &data).unwrap();
        assert!((obj.value(pred.g()) - direct).abs() < 1e-9 * direct);
    }

    #[test]
    fn predictor_shape_checks() {
        assert!(Predictor::multi_step(Mat::zeros(4, 5), 2, 2).is_err());
        assert!(Predictor::multi_step(Mat::zeros(4, 4), 2, 2).is_ok());
        assert!(Predictor::rollout(Mat::zeros(2, 2), Mat::zeros(1, 1), 2, PredictorClass::SingleStep).is_err());
        assert!(Predictor::rollout(Mat::zeros(1, 1), Mat::zeros(1, 0), 2, PredictorClass::MultiStep).is_err());
    }

    #[test]
    fn class_names_round_trip() {
        for c in PredictorClass::ALL {
            assert_eq!(c.as_str().parse::<PredictorClass>().unwrap(), c);
        }
        assert!("rollout".parse::<PredictorClass>().is_err());
    }
}
