//! Scalar nonlinear system with an exact four-dimensional Koopman lifting:
//!
//! `p_{t+1} = μ p_t + w_p`, `q_{t+1} = λ (q_t − p_t²) + w_q`, observed
//! through `y_t = C (p_t, q_t, p_t², 1) + σ_v v_t`.

use crate::error::{Error, Result};
use crate::linalg::{from_rows, Mat};
use crate::predictors::{
    empirical_loss, fit_intermediate, fit_multi_step, fit_single_step, Dataset, OptimizerConfig,
    PredictorClass,
};
use crate::rng;

pub const LIFTED_DIM: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct KoopmanSystem {
    mu: f64,
    lambda: f64,
    sigma_w: f64,
    sigma_v: f64,
    c: Mat,
}

impl KoopmanSystem {
    pub fn new(mu: f64, lambda: f64, sigma_w: f64, sigma_v: f64, c: Mat) -> Result<Self> {
        if !(mu.abs() < 1.0 && lambda.abs() < 1.0) {
            return Err(Error::arg(format!("need |μ| < 1 and |λ| < 1, got {mu} and {lambda}")));
        }
        if !(sigma_w >= 0.0 && sigma_v >= 0.0) || !sigma_w.is_finite() || !sigma_v.is_finite() {
            return Err(Error::arg("noise levels must be finite and nonnegative"));
        }
        if c.ncols() != LIFTED_DIM || c.nrows() == 0 {
            return Err(Error::dim(format!("C must be d_y × {LIFTED_DIM}, got {:?}", c.shape())));
        }
        Ok(Self {
            mu,
            lambda,
            sigma_w,
            sigma_v,
            c,
        })
    }

    /// All four observables measured exactly.
    pub fn fully_observed(mu: f64, lambda: f64, sigma_w: f64) -> Result<Self> {
        Self::new(mu, lambda, sigma_w, 0.0, Mat::identity(LIFTED_DIM, LIFTED_DIM))
    }

    /// Only `q` is measured, with sensor noise `sigma_v`.
    pub fn q_observed(mu: f64, lambda: f64, sigma_w: f64, sigma_v: f64) -> Result<Self> {
        Self::new(mu, lambda, sigma_w, sigma_v, from_rows(&[&[0.0, 1.0, 0.0, 0.0]]))
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn sigma_w(&self) -> f64 {
        self.sigma_w
    }
    pub fn sigma_v(&self) -> f64 {
        self.sigma_v
    }
    pub fn c(&self) -> &Mat {
        &self.c
    }
    pub fn dy(&self) -> usize {
        self.c.nrows()
    }

    /// Noise-free part of the lifted transition.
    pub fn lifted_transition(&self) -> Mat {
        let (m, l) = (self.mu, self.lambda);
        from_rows(&[
            &[m, 0.0, 0.0, 0.0],
            &[0.0, l, -l, 0.0],
            &[0.0, 0.0, m * m, 0.0],
            &[0.0, 0.0, 0.0, 1.0],
        ])
    }

    /// One step of the original recursion.
    pub fn step(&self, p: f64, q: f64, w_p: f64, w_q: f64) -> (f64, f64) {
        (self.mu * p + w_p, self.lambda * (q - p * p) + w_q)
    }
}

pub fn lift(p: f64, q: f64) -> [f64; LIFTED_DIM] {
    [p, q, p * p, 1.0]
}

#[derive(Debug, Clone, PartialEq)]
pub struct KoopmanRollout {
    /// Column `t` is the lifted state at time `t = 0..=N`.
    pub lifted: Mat,
    /// Column `t − 1` is `y_t`.
    pub observations: Mat,
    pub seed: u64,
}

/// Iterates the `(p, q)` recursion from the origin and lifts each state.
/// Per step the draws are `w_p`, `w_q`, then the sensor noise vector.
pub fn simulate_koopman(sys: &KoopmanSystem, n: usize, seed: u64) -> Result<KoopmanRollout> {
    if n == 0 {
        return Err(Error::arg("simulate needs at least one step"));
    }
    let dy = sys.dy();
    let mut rng = rng::stream(seed);
    let mut lifted = Mat::zeros(LIFTED_DIM, n + 1);
    let mut observations = Mat::zeros(dy, n);
    lifted.set_column(0, &nalgebra::DVector::from_row_slice(&lift(0.0, 0.0)));
    let (mut p, mut q) = (0.0, 0.0);
    let mut v = vec![0.0; dy];
    for t in 1..=n {
        let w_p = sys.sigma_w * rng::normal(&mut rng);
        let w_q = sys.sigma_w * rng::normal(&mut rng);
        (p, q) = sys.step(p, q, w_p, w_q);
        let x = lift(p, q);
        for (i, xi) in x.iter().enumerate() {
            lifted[(i, t)] = *xi;
        }
        rng::fill_normal(&mut rng, &mut v);
        for i in 0..dy {
            let cx: f64 = (0..LIFTED_DIM).map(|j| sys.c[(i, j)] * x[j]).sum();
            observations[(i, t - 1)] = cx + sys.sigma_v * v[i];
        }
    }
    Ok(KoopmanRollout {
        lifted,
        observations,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonEntry {
    pub class: PredictorClass,
    pub horizon: usize,
    /// Mean `H`-step squared error on the evaluation rollout.
    pub loss: Result<f64>,
}

/// One replica: fits all three classes for every horizon on a length-`n`
/// rollout and evaluates each on an independent rollout of length `10 n`.
pub fn comparison_replica(
    sys: &KoopmanSystem,
    horizons: &[usize],
    n: usize,
    seed: u64,
    cfg: &OptimizerConfig,
) -> Result<Vec<ComparisonEntry>> {
    let train_seed = rng::derive_seed(seed, &[rng::label("train")]);
    let eval_seed = rng::derive_seed(seed, &[rng::label("eval")]);
    let train = Dataset::autonomous(simulate_koopman(sys, n, train_seed)?.observations, train_seed)?;
    let eval = Dataset::autonomous(simulate_koopman(sys, 10 * n, eval_seed)?.observations, eval_seed)?;
    let ss = fit_single_step(&train, 1);
    let mut out = Vec::new();
    for &h in horizons {
        let ss_h = ss.as_ref().map_err(Clone::clone).and_then(|f| f.predictor.with_horizon(h));
        let ms = fit_multi_step(&train, h).map(|f| f.predictor);
        let inter = ss_h.as_ref().map_err(Clone::clone).and_then(|p| {
            let (gy, gu) = p.generator().expect("single-step fits are rollouts");
            fit_intermediate(&train, h, Some((gy, gu)), cfg).map(|f| f.predictor)
        });
        for (class, pred) in [
            (PredictorClass::SingleStep, ss_h),
            (PredictorClass::MultiStep, ms),
            (PredictorClass::Intermediate, inter),
        ] {
            let loss = pred.and_then(|p| empirical_loss(&p, &eval));
            out.push(ComparisonEntry {
                class,
                horizon: h,
                loss,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonSummary {
    pub class: PredictorClass,
    pub horizon: usize,
    pub mean_loss: f64,
    pub successes: usize,
    pub failures: usize,
}

/// Mean evaluation loss per `(class, H)` over `replicas` replicas.
pub fn nonlinear_comparison(
    sys: &KoopmanSystem,
    horizons: &[usize],
    n: usize,
    replicas: usize,
    seed: u64,
    cfg: &OptimizerConfig,
) -> Result<Vec<ComparisonSummary>> {
    use rayon::prelude::*;
    let runs: Vec<Result<Vec<ComparisonEntry>>> = (0..replicas)
        .into_par_iter()
        .map(|r| comparison_replica(sys, horizons, n, rng::derive_seed(seed, &[r as u64]), cfg))
        .collect();
    let mut out = Vec::new();
    for &h in horizons {
        for class in PredictorClass::ALL {
            let losses: Vec<f64> = runs
                .iter()
                .filter_map(|r| r.as_ref().ok())
                .flat_map(|entries| entries.iter())
                .filter(|e| e.class == class && e.horizon == h)
                .filter_map(|e| e.loss.as_ref().ok().copied())
                .collect();
            out.push(ComparisonSummary {
                class,
                horizon: h,
                mean_loss: losses.iter().sum::<f64>() / losses.len().max(1) as f64,
                successes: losses.len(),
                failures: replicas - losses.len(),
            });
        }
    }
    Ok(out)
}
