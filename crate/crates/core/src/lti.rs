//! Linear time-invariant systems driven by Gaussian noise, their stationary
//! covariances, the Kalman innovations form, and the stacked rollout maps
//! that every predictor and error formula is expressed in.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg::{
    all_finite, block_diag, frobenius_sq, powers, spd_inverse, spectral_radius, sym_sqrt,
    symmetrize, Mat,
};
use crate::rng;

/// `x_{t+1} = A x_t + B u_t + B_w w_t`, `y_t = C x_t + D_v v_t` with
/// standard normal `w`, `v` and a strictly stable `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    a: Mat,
    b: Mat,
    b_w: Mat,
    c: Mat,
    d_v: Mat,
}

impl LtiSystem {
    pub fn new(a: Mat, b: Mat, b_w: Mat, c: Mat, d_v: Mat) -> Result<Self> {
        let dx = a.nrows();
        if a.ncols() != dx {
            return Err(Error::dim(format!("A must be square, got {:?}", a.shape())));
        }
        if dx == 0 {
            return Err(Error::dim("state dimension must be positive"));
        }
        if b.nrows() != dx {
            return Err(Error::dim(format!("B has {} rows, expected {dx}", b.nrows())));
        }
        if b_w.nrows() != dx {
            return Err(Error::dim(format!("B_w has {} rows, expected {dx}", b_w.nrows())));
        }
        if c.ncols() != dx || c.nrows() == 0 {
            return Err(Error::dim(format!("C is {:?}, expected (d_y, {dx})", c.shape())));
        }
        if d_v.nrows() != c.nrows() {
            return Err(Error::dim(format!(
                "D_v has {} rows, expected {}",
                d_v.nrows(),
                c.nrows()
            )));
        }
        for (name, m) in [("A", &a), ("B", &b), ("B_w", &b_w), ("C", &c), ("D_v", &d_v)] {
            if !all_finite(m) {
                return Err(Error::arg(format!("{name} has non-finite entries")));
            }
        }
        let rho = spectral_radius(&a)?;
        if rho >= 1.0 {
            return Err(Error::Unstable(rho));
        }
        Ok(Self { a, b, b_w, c, d_v })
    }

    /// `C = I`, no sensor noise.
    pub fn fully_observed(a: Mat, b: Mat, b_w: Mat) -> Result<Self> {
        let dx = a.nrows();
        Self::new(a, b, b_w, Mat::identity(dx, dx), Mat::zeros(dx, 0))
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }
    pub fn b(&self) -> &Mat {
        &self.b
    }
    pub fn b_w(&self) -> &Mat {
        &self.b_w
    }
    pub fn c(&self) -> &Mat {
        &self.c
    }
    pub fn d_v(&self) -> &Mat {
        &self.d_v
    }
    pub fn dx(&self) -> usize {
        self.a.nrows()
    }
    pub fn du(&self) -> usize {
        self.b.ncols()
    }
    pub fn dw(&self) -> usize {
        self.b_w.ncols()
    }
    pub fn dy(&self) -> usize {
        self.c.nrows()
    }
    pub fn dv(&self) -> usize {
        self.d_v.ncols()
    }

    /// True iff `C` is exactly the identity and there is no sensor noise
    /// channel; selects the well-specified code paths.
    pub fn is_fully_observed(&self) -> bool {
        self.dv() == 0 && self.c.is_square() && self.c == Mat::identity(self.dx(), self.dx())
    }

    /// Same system with a different process-noise map.
    pub fn with_noise_map(&self, b_w: Mat) -> Result<Self> {
        Self::new(self.a.clone(), self.b.clone(), b_w, self.c.clone(), self.d_v.clone())
    }

    /// Same system with a different input map.
    pub fn with_input_map(&self, b: Mat) -> Result<Self> {
        Self::new(self.a.clone(), b, self.b_w.clone(), self.c.clone(), self.d_v.clone())
    }

    /// Stationary state covariance under i.i.d. standard normal inputs.
    pub fn state_covariance(&self) -> Result<Mat> {
        let q = &self.b * self.b.transpose() + &self.b_w * self.b_w.transpose();
        solve_dlyap(&self.a, &q)
    }
}

/// One simulated rollout. Column `t` of `states` is `x_t` for `t = 0..=N`;
/// column `t - 1` of `observations` / `inputs` is `y_t` / `u_t` for `t = 1..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Mat,
    pub observations: Mat,
    pub inputs: Mat,
    pub seed: u64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.observations.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Simulates `n` steps from `x_0 = 0`.
///
/// Per step the draws are taken in the fixed order `w_{t-1}`, `v_t`, `u_t`;
/// there is no input before the recorded window (`u_0 = 0`).
pub fn simulate(system: &LtiSystem, n: usize, seed: u64) -> Result<Trajectory> {
    if n == 0 {
        return Err(Error::arg("simulate needs at least one step"));
    }
    let (dx, du, dw, dy, dv) = (system.dx(), system.du(), system.dw(), system.dy(), system.dv());
    let mut rng = rng::stream(seed);
    let mut states = Mat::zeros(dx, n + 1);
    let mut observations = Mat::zeros(dy, n);
    let mut inputs = Mat::zeros(du, n);

    let mut x = DVector::zeros(dx);
    let mut next = DVector::zeros(dx);
    let mut u = DVector::zeros(du);
    let mut w = DVector::zeros(dw);
    let mut v = DVector::zeros(dv);
    let mut y = DVector::zeros(dy);

    for t in 1..=n {
        rng::fill_normal(&mut rng, w.as_mut_slice());
        next.gemv(1.0, &system.a, &x, 0.0);
        next.gemv(1.0, &system.b, &u, 1.0);
        next.gemv(1.0, &system.b_w, &w, 1.0);
        std::mem::swap(&mut x, &mut next);
        states.set_column(t, &x);

        rng::fill_normal(&mut rng, v.as_mut_slice());
        y.gemv(1.0, &system.c, &x, 0.0);
        y.gemv(1.0, &system.d_v, &v, 1.0);
        observations.set_column(t - 1, &y);

        rng::fill_normal(&mut rng, u.as_mut_slice());
        inputs.set_column(t - 1, &u);
    }
    Ok(Trajectory {
        states,
        observations,
        inputs,
        seed,
    })
}

/// Solves `P = A P Aᵀ + Q` by squaring (doubling) the series
/// `Σ_k A^k Q (Aᵀ)^k`.
pub fn solve_dlyap(a: &Mat, q: &Mat) -> Result<Mat> {
    let n = a.nrows();
    if a.ncols() != n || q.shape() != (n, n) {
        return Err(Error::dim(format!(
            "Lyapunov equation needs square A and matching Q, got {:?} and {:?}",
            a.shape(),
            q.shape()
        )));
    }
    if !all_finite(a) || !all_finite(q) {
        return Err(Error::arg("Lyapunov data has non-finite entries"));
    }
    let q_norm = frobenius_sq(q).sqrt();
    if (q - q.transpose()).norm() > 1e-10 * q_norm.max(1.0) {
        return Err(Error::arg("Q must be symmetric"));
    }
    let rho = spectral_radius(a)?;
    if rho >= 1.0 {
        return Err(Error::Unstable(rho));
    }

    const MAX_DOUBLINGS: usize = 64;
    let mut p = symmetrize(q);
    let mut ak = a.clone();
    let mut last_change = f64::INFINITY;
    let mut converged = false;
    for _ in 0..MAX_DOUBLINGS {
        let inc = &ak * &p * ak.transpose();
        p += &inc;
        ak = &ak * &ak;
        last_change = inc.norm();
        if last_change <= 1e-17 * p.norm() || ak.norm() == 0.0 {
            converged = true;
            break;
        }
    }
    let p = symmetrize(&p);
    let residual = (&p - a * &p * a.transpose() - q).norm();
    if !converged || !residual.is_finite() || residual > 1e-10 * q_norm.max(1.0) {
        return Err(Error::NoConvergence {
            solver: "Lyapunov doubling",
            iterations: MAX_DOUBLINGS,
            change: last_change.max(residual),
        });
    }
    Ok(p)
}

/// Stabilizing solution of the filtering Riccati equation
/// `S = A S Aᵀ + Q − A S Cᵀ (C S Cᵀ + R)⁻¹ C S Aᵀ` by fixed-point iteration
/// from `S₀ = Q`.
pub fn solve_dare(a: &Mat, c: &Mat, q: &Mat, r: &Mat) -> Result<Mat> {
    const MAX_ITERS: usize = 100_000;
    let n = a.nrows();
    if a.ncols() != n || c.ncols() != n || q.shape() != (n, n) || r.shape() != (c.nrows(), c.nrows())
    {
        return Err(Error::dim("Riccati data dimensions are inconsistent"));
    }
    let mut s = symmetrize(q);
    let mut change = f64::INFINITY;
    for _ in 0..MAX_ITERS {
        let innov = c * &s * c.transpose() + r;
        let innov_inv = spd_inverse(&innov, "innovation covariance C S Cᵀ + R")?;
        let asc = a * &s * c.transpose();
        let next = symmetrize(&(a * &s * a.transpose() + q - &asc * innov_inv * asc.transpose()));
        change = (&next - &s).norm();
        s = next;
        if !change.is_finite() {
            break;
        }
        if change <= 1e-12 * s.norm().max(1.0) {
            return Ok(s);
        }
    }
    Err(Error::NoConvergence {
        solver: "Riccati iteration",
        iterations: MAX_ITERS,
        change,
    })
}

pub fn riccati_residual(a: &Mat, c: &Mat, q: &Mat, r: &Mat, s: &Mat) -> f64 {
    let innov = c * s * c.transpose() + r;
    let asc = a * s * c.transpose();
    let rhs = match innov.clone().try_inverse() {
        Some(inv) => a * s * a.transpose() + q - &asc * inv * asc.transpose(),
        None => return f64::INFINITY,
    };
    (s - rhs).norm()
}

/// Innovations representation `x̂_{t+1} = A x̂_t + K D_e e_t`,
/// `y_t = C x̂_t + D_e e_t` with white standard normal `e_t`.
///
/// The covariances describe the input-free process.
#[derive(Debug, Clone, PartialEq)]
pub struct InnovationsForm {
    pub k: Mat,
    pub s: Mat,
    pub d_e: Mat,
    pub sigma_xhat: Mat,
    pub sigma_y: Mat,
}

impl InnovationsForm {
    /// Stationary state covariance `Σ_x = Σ_x̂ + S`.
    pub fn sigma_x(&self) -> Mat {
        &self.sigma_xhat + &self.s
    }

    /// `E[y_{t+k} y_tᵀ] = C A^{k-1} (A Σ_x̂ Cᵀ + K D_e D_eᵀ)` for `k ≥ 1`.
    pub fn output_cross_covariance(&self, system: &LtiSystem, lag: usize) -> Mat {
        let (a, c) = (system.a(), system.c());
        if lag == 0 {
            return self.sigma_y.clone();
        }
        let base = a * &self.sigma_xhat * c.transpose() + &self.k * &self.d_e * self.d_e.transpose();
        c * powers(a, lag - 1).pop().unwrap() * base
    }

    /// Probability limit of the one-step least-squares coefficient,
    /// `E[y_{t+1} y_tᵀ] Σ_y⁻¹`.
    pub fn single_step_limit(&self, system: &LtiSystem) -> Result<Mat> {
        let inv = spd_inverse(&self.sigma_y, "stationary output covariance")?;
        Ok(self.output_cross_covariance(system, 1) * inv)
    }
}

pub fn kalman_innovations(system: &LtiSystem) -> Result<InnovationsForm> {
    let (a, c) = (system.a(), system.c());
    let q = system.b_w() * system.b_w().transpose();
    let r = system.d_v() * system.d_v().transpose();
    if r.nrows() == 0 || r.clone().cholesky().is_none() {
        return Err(Error::NotPositiveDefinite("sensor noise covariance D_v D_vᵀ"));
    }
    let s = solve_dare(a, c, &q, &r)?;
    let innov = c * &s * c.transpose() + &r;
    let innov_inv = spd_inverse(&innov, "innovation covariance C S Cᵀ + R")?;
    let k = a * &s * c.transpose() * innov_inv;
    let d_e = sym_sqrt(&innov);
    let closed = a - &k * c;
    let rho = spectral_radius(&closed)?;
    if rho >= 1.0 {
        return Err(Error::Unstable(rho));
    }
    let drive = &k * &d_e * d_e.transpose() * k.transpose();
    let sigma_xhat = solve_dlyap(a, &symmetrize(&drive))?;
    let sigma_y = symmetrize(&(c * &sigma_xhat * c.transpose() + &d_e * d_e.transpose()));
    Ok(InnovationsForm {
        k,
        s,
        d_e,
        sigma_xhat,
        sigma_y,
    })
}

/// `blockdiag(Σ_x, I_{H d_u})`, the covariance of `z_t = [x_t; u_{t:t+H-1}]`.
pub fn stationary_regressor_cov(system: &LtiSystem, horizon: usize) -> Result<Mat> {
    if !system.is_fully_observed() {
        return Err(Error::arg("regressor covariance needs a fully observed system"));
    }
    let sigma_x = system.state_covariance()?;
    let inputs = Mat::identity(horizon * system.du(), horizon * system.du());
    Ok(block_diag(&[&sigma_x, &inputs]))
}

/// `x_{t+1:t+H} = G* [x_t; u_{t:t+H-1}] + Γ_w w_{t:t+H-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct WellSpecRollout {
    pub g_star: Mat,
    pub gamma_w: Mat,
    pub horizon: usize,
}

/// `y_{t+1:t+H} = Φ x̂_t + G* y_t + Γ_e e_{t+1:t+H}`.
#[derive(Debug, Clone, PartialEq)]
pub struct MisspecRollout {
    pub phi: Mat,
    pub g_star: Mat,
    pub gamma_e: Mat,
    pub horizon: usize,
}

/// Block row `k` of the stacked map `[M^k, M^{k-1} N, ..., N, 0, ...]`.
pub(crate) fn stacked_rollout(m: &Mat, n: &Mat, horizon: usize) -> Mat {
    let (d, du) = (m.nrows(), n.ncols());
    let pw = powers(m, horizon);
    let mut g = Mat::zeros(horizon * d, d + horizon * du);
    let driven: Vec<Mat> = pw.iter().map(|p| p * n).collect();
    for k in 1..=horizon {
        let row = (k - 1) * d;
        g.view_mut((row, 0), (d, d)).copy_from(&pw[k]);
        for i in 1..=k {
            g.view_mut((row, d + (i - 1) * du), (d, du))
                .copy_from(&driven[k - i]);
        }
    }
    g
}

pub fn build_rollout_wellspec(system: &LtiSystem, horizon: usize) -> Result<WellSpecRollout> {
    if horizon == 0 {
        return Err(Error::arg("horizon must be at least 1"));
    }
    if !system.is_fully_observed() {
        return Err(Error::arg("well-specified rollout needs a fully observed system"));
    }
    let (dx, dw) = (system.dx(), system.dw());
    let pw = powers(system.a(), horizon);
    let g_star = stacked_rollout(system.a(), system.b(), horizon);
    let mut gamma_w = Mat::zeros(horizon * dx, horizon * dw);
    for i in 0..horizon {
        for j in 0..=i {
            gamma_w
                .view_mut((i * dx, j * dw), (dx, dw))
                .copy_from(&(&pw[i - j] * system.b_w()));
        }
    }
    Ok(WellSpecRollout {
        g_star,
        gamma_w,
        horizon,
    })
}

pub fn build_rollout_misspec(
    innov: &InnovationsForm,
    system: &LtiSystem,
    horizon: usize,
) -> Result<MisspecRollout> {
    if horizon == 0 {
        return Err(Error::arg("horizon must be at least 1"));
    }
    if system.du() > 0 {
        return Err(Error::arg("misspecified rollout is defined for systems without inputs"));
    }
    let (a, c) = (system.a(), system.c());
    let (dx, dy) = (system.dx(), system.dy());
    let pw = powers(a, horizon);
    let closed = a - &innov.k * c;
    let mut phi = Mat::zeros(horizon * dy, dx);
    let mut g_star = Mat::zeros(horizon * dy, dy);
    let mut gamma_e = Mat::zeros(horizon * dy, horizon * dy);
    let ck: Vec<Mat> = pw.iter().map(|p| c * p * &innov.k).collect();
    for k in 1..=horizon {
        let row = (k - 1) * dy;
        phi.view_mut((row, 0), (dy, dx))
            .copy_from(&(c * &pw[k - 1] * &closed));
        g_star.view_mut((row, 0), (dy, dy)).copy_from(&ck[k - 1]);
    }
    for i in 0..horizon {
        gamma_e.view_mut((i * dy, i * dy), (dy, dy)).copy_from(&innov.d_e);
        for j in 0..i {
            gamma_e
                .view_mut((i * dy, j * dy), (dy, dy))
                .copy_from(&(&ck[i - j - 1] * &innov.d_e));
        }
    }
    Ok(MisspecRollout {
        phi,
        g_star,
        gamma_e,
        horizon,
    })
}
