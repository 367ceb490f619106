//! Minimization of a quadratic multi-step objective over predictors that
//! are rollouts of a single-step pair `(G_y, G_u)`.

use crate::error::{Error, Result};
use crate::linalg::{powers, Mat};
use crate::lti::stacked_rollout;

/// `L(G) = tr(G Q Gᵀ) − 2⟨G, P⟩ + c` for `G` of shape `H d_y × (d_y + H d_u)`.
///
/// Both the empirical multi-step loss (sample moments of the windows) and
/// the misspecified population loss (stationary moments) have this form.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticObjective {
    pub q: Mat,
    pub p: Mat,
    pub c: f64,
    pub horizon: usize,
    pub dy: usize,
    pub du: usize,
}

impl QuadraticObjective {
    pub fn new(q: Mat, p: Mat, c: f64, horizon: usize, dy: usize, du: usize) -> Result<Self> {
        let cols = dy + horizon * du;
        if q.shape() != (cols, cols) || p.shape() != (horizon * dy, cols) {
            return Err(Error::dim(format!(
                "objective moments {:?} and {:?} do not match horizon {horizon}, d_y {dy}, d_u {du}",
                q.shape(),
                p.shape()
            )));
        }
        Ok(Self {
            q,
            p,
            c,
            horizon,
            dy,
            du,
        })
    }

    pub fn value(&self, g: &Mat) -> f64 {
        let gq = g * &self.q;
        gq.dot(g) - 2.0 * g.dot(&self.p) + self.c
    }

    /// Gradient with respect to the full matrix `G`.
    pub fn gradient(&self, g: &Mat) -> Mat {
        (g * &self.q - &self.p) * 2.0
    }

    /// Unconstrained minimizer `P Q⁻¹`.
    pub fn unconstrained_minimizer(&self) -> Result<Mat> {
        let chol = self.q.clone().cholesky().ok_or(Error::NotPositiveDefinite(
            "objective second-moment matrix",
        ))?;
        Ok(chol.solve(&self.p.transpose()).transpose())
    }
}

/// Rollout matrix of `(G_y, G_u)`: block row `k` is
/// `[G_y^k, G_y^{k-1} G_u, ..., G_u, 0, ...]`.
pub fn compose(gy: &Mat, gu: &Mat, horizon: usize) -> Mat {
    stacked_rollout(gy, gu, horizon)
}

/// Value of the objective at the rollout of `(G_y, G_u)` and its gradient
/// with respect to both factors, back-propagated through the powers of `G_y`
/// in `O(H)` matrix products.
pub fn structured_value_and_gradient(
    obj: &QuadraticObjective,
    gy: &Mat,
    gu: &Mat,
) -> (f64, Mat, Mat) {
    let (h, dy, du) = (obj.horizon, obj.dy, obj.du);
    let g = compose(gy, gu, h);
    let value = obj.value(&g);
    let d = obj.gradient(&g);
    let pw = powers(gy, h);

    // E_m collects the blocks of D multiplying G_y^m G_u.
    let mut e = vec![Mat::zeros(dy, du); h];
    for k in 1..=h {
        for i in 1..=k {
            e[k - i] += d.view(((k - 1) * dy, dy + (i - 1) * du), (dy, du));
        }
    }
    let mut grad_u = Mat::zeros(dy, du);
    for (m, em) in e.iter().enumerate() {
        grad_u += pw[m].transpose() * em;
    }

    // ⟨W_m, G_y^m⟩ carries every dependence on G_y; Horner-style adjoints.
    let w: Vec<Mat> = (1..=h)
        .map(|m| {
            let mut wm = d.view(((m - 1) * dy, 0), (dy, dy)).into_owned();
            if m < h && du > 0 {
                wm += &e[m] * gu.transpose();
            }
            wm
        })
        .collect();
    let mut grad_y = Mat::zeros(dy, dy);
    let mut adj = w[h - 1].clone();
    for m in (0..h).rev() {
        // adj currently holds adj_{m+1}.
        grad_y += &adj * pw[m].transpose();
        if m > 0 {
            adj = &w[m - 1] + gy.transpose() * &adj;
        }
    }
    (value, grad_y, grad_u)
}

/// Derivatives of the rollout matrix along each coordinate of
/// `θ = (vec G_y, vec G_u)` (column-major).
pub fn rollout_jacobian(gy: &Mat, gu: &Mat, horizon: usize) -> Vec<Mat> {
    let (dy, du) = (gy.nrows(), gu.ncols());
    let pw = powers(gy, horizon);
    let mut out = Vec::with_capacity(dy * dy + dy * du);
    for col in 0..dy {
        for row in 0..dy {
            let mut e = Mat::zeros(dy, dy);
            e[(row, col)] = 1.0;
            let mut dp = vec![Mat::zeros(dy, dy); horizon + 1];
            for m in 1..=horizon {
                dp[m] = &e * &pw[m - 1] + gy * &dp[m - 1];
            }
            let mut dg = Mat::zeros(horizon * dy, dy + horizon * du);
            for k in 1..=horizon {
                dg.view_mut(((k - 1) * dy, 0), (dy, dy)).copy_from(&dp[k]);
                for i in 1..=k {
                    dg.view_mut(((k - 1) * dy, dy + (i - 1) * du), (dy, du))
                        .copy_from(&(&dp[k - i] * gu));
                }
            }
            out.push(dg);
        }
    }
    for col in 0..du {
        for row in 0..dy {
            let mut e = Mat::zeros(dy, du);
            e[(row, col)] = 1.0;
            let mut dg = Mat::zeros(horizon * dy, dy + horizon * du);
            for k in 1..=horizon {
                for i in 1..=k {
                    dg.view_mut(((k - 1) * dy, dy + (i - 1) * du), (dy, du))
                        .copy_from(&(&pw[k - i] * &e));
                }
            }
            out.push(dg);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    /// Adam step size.
    pub step_size: f64,
    /// Adam iteration budget.
    pub max_iters: usize,
    /// Stop once the gradient ∞-norm falls to this level.
    pub grad_tol: f64,
    /// Iteration budget of the Levenberg–Marquardt refinement that follows
    /// Adam; zero disables it.
    pub polish_iters: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            step_size: 1e-2,
            max_iters: 50_000,
            grad_tol: 1e-8,
            polish_iters: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerDiagnostics {
    pub iterations: usize,
    pub polish_iterations: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub grad_norm: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct StructuredOptimum {
    pub gy: Mat,
    pub gu: Mat,
    pub diagnostics: OptimizerDiagnostics,
}

fn split(theta: &[f64], dy: usize, du: usize) -> (Mat, Mat) {
    (
        Mat::from_column_slice(dy, dy, &theta[..dy * dy]),
        Mat::from_column_slice(dy, du, &theta[dy * dy..]),
    )
}

fn join(gy: &Mat, gu: &Mat) -> Vec<f64> {
    gy.iter().chain(gu.iter()).cloned().collect()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

const DIVERGENCE_FACTOR: f64 = 1e6;

/// Strictly lower loss wins; losses equal up to rounding are decided by the
/// gradient norm, which resolves the last digits near a stationary point.
fn improves(loss: f64, grad: f64, best_loss: f64, best_grad: f64, eps: f64) -> bool {
    if loss < best_loss - eps {
        true
    } else {
        loss <= best_loss + eps && grad < best_grad
    }
}

/// Adam from `(gy0, gu0)` keeping the best iterate, followed by a
/// Levenberg–Marquardt refinement that uses the exact Gauss–Newton model of
/// the quadratic objective. Adam's fixed step leaves the iterate hovering at
/// a distance set by the step size; the refinement brings it onto the
/// stationary point so excess losses of order `1/N` are resolved.
pub fn minimize_structured(
    obj: &QuadraticObjective,
    gy0: &Mat,
    gu0: &Mat,
    cfg: &OptimizerConfig,
) -> Result<StructuredOptimum> {
    let (dy, du) = (obj.dy, obj.du);
    if gy0.shape() != (dy, dy) || gu0.shape() != (dy, du) {
        return Err(Error::dim("initial single-step pair has the wrong shape"));
    }
    let (beta1, beta2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    let mut theta = join(gy0, gu0);
    let n = theta.len();
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];

    let (initial_loss, gy_grad, gu_grad) = structured_value_and_gradient(obj, gy0, gu0);
    if !initial_loss.is_finite() {
        return Err(Error::Divergence {
            loss: initial_loss,
            limit: f64::INFINITY,
        });
    }
    let limit = DIVERGENCE_FACTOR * initial_loss.abs().max(f64::MIN_POSITIVE);
    // Loss differences below this level are rounding noise of the expanded
    // quadratic.
    let eps_loss = 1e-12 * obj.c.abs().max(initial_loss.abs());
    let mut best = (initial_loss, theta.clone(), inf_norm(&join(&gy_grad, &gu_grad)));
    let mut grad = join(&gy_grad, &gu_grad);
    let mut iterations = 0;

    while iterations < cfg.max_iters && inf_norm(&grad) > cfg.grad_tol {
        iterations += 1;
        let t = iterations as i32;
        let (c1, c2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
        for i in 0..n {
            m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
            theta[i] -= cfg.step_size * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
        }
        let (gy, gu) = split(&theta, dy, du);
        let (loss, g_y, g_u) = structured_value_and_gradient(obj, &gy, &gu);
        if !loss.is_finite() || loss > limit {
            return Err(Error::Divergence { loss, limit });
        }
        grad = join(&g_y, &g_u);
        let grad_norm = inf_norm(&grad);
        if loss <= initial_loss && improves(loss, grad_norm, best.0, best.2, eps_loss) {
            best = (loss, theta.clone(), grad_norm);
        }
    }

    let (mut loss, mut theta, mut grad_norm) = best;
    let mut polish_iterations = 0;
    if cfg.polish_iters > 0 && grad_norm > cfg.grad_tol {
        let mut lambda = 1e-3;
        while polish_iterations < cfg.polish_iters && grad_norm > cfg.grad_tol {
            polish_iterations += 1;
            let (gy, gu) = split(&theta, dy, du);
            let (_, g_y, g_u) = structured_value_and_gradient(obj, &gy, &gu);
            let g = join(&g_y, &g_u);
            let jac = rollout_jacobian(&gy, &gu, obj.horizon);
            let jq: Vec<Mat> = jac.iter().map(|j| j * &obj.q).collect();
            let mut hess = Mat::zeros(n, n);
            for a in 0..n {
                for b in a..n {
                    let h = 2.0 * jq[a].dot(&jac[b]);
                    hess[(a, b)] = h;
                    hess[(b, a)] = h;
                }
            }
            let scale = (0..n).map(|i| hess[(i, i)]).fold(0.0, f64::max).max(1e-300);
            let rhs = nalgebra::DVector::from_vec(g.iter().map(|x| -x).collect());
            let mut improved = false;
            while lambda < 1e12 {
                let mut damped = hess.clone();
                for i in 0..n {
                    damped[(i, i)] += lambda * (hess[(i, i)] + 1e-12 * scale);
                }
                let Some(chol) = damped.cholesky() else {
                    lambda *= 4.0;
                    continue;
                };
                let step = chol.solve(&rhs);
                let trial: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t + s).collect();
                let (ty, tu) = split(&trial, dy, du);
                let (trial_loss, t_y, t_u) = structured_value_and_gradient(obj, &ty, &tu);
                if trial_loss.is_finite() && trial_loss <= initial_loss {
                    let trial_grad = inf_norm(&join(&t_y, &t_u));
                    if improves(trial_loss, trial_grad, loss, grad_norm, eps_loss) {
                        loss = trial_loss;
                        theta = trial;
                        grad_norm = trial_grad;
                        lambda = (lambda / 3.0).max(1e-12);
                        improved = true;
                        break;
                    }
                }
                lambda *= 4.0;
            }
            if !improved {
                break;
            }
        }
    }

    let (gy, gu) = split(&theta, dy, du);
    Ok(StructuredOptimum {
        gy,
        gu,
        diagnostics: OptimizerDiagnostics {
            iterations,
            polish_iterations,
            initial_loss,
            final_loss: loss,
            grad_norm,
            converged: grad_norm <= cfg.grad_tol,
        },
    })
}
