//! Least squares through a QR factorization of the regressor matrix.

use crate::error::{Error, Result};
use crate::linalg::Mat;

/// Regressors whose condition number reaches this value are treated as
/// rank deficient; the Gram matrix then has condition `1e12` or more.
pub const MAX_REGRESSOR_CONDITION: f64 = 1e6;

#[derive(Debug, Clone)]
pub struct LstsqSolution {
    /// `p × m` coefficients `X` minimizing `‖Z X − Y‖_F`.
    pub coefficients: Mat,
    /// Condition number of the Gram matrix `ZᵀZ` (infinite when singular).
    pub gram_condition: f64,
}

fn condition_from(singular_values: &[f64]) -> f64 {
    let max = singular_values.iter().cloned().fold(0.0, f64::max);
    let min = singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

fn min_norm(z: &Mat, y: &Mat) -> Result<Mat> {
    let svd = z.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let eps = smax * (z.nrows().max(z.ncols()) as f64) * f64::EPSILON;
    svd.solve(y, eps.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::arg(format!("pseudo-inverse solve failed: {e}")))
}

/// Solves `min ‖Z X − Y‖_F`.
///
/// Well-conditioned tall problems go through QR. Underdetermined problems
/// (fewer rows than unknowns) return the minimum-norm solution. Numerically
/// rank-deficient tall problems also fall back to the minimum-norm solution
/// when it fits the data exactly, and otherwise fail with
/// [`Error::Singular`].
pub fn lstsq(z: &Mat, y: &Mat) -> Result<LstsqSolution> {
    let (n, p) = z.shape();
    if y.nrows() != n {
        return Err(Error::dim(format!(
            "regressors have {n} rows but targets have {}",
            y.nrows()
        )));
    }
    if n == 0 || p == 0 {
        return Ok(LstsqSolution {
            coefficients: Mat::zeros(p, y.ncols()),
            gram_condition: if p == 0 { 1.0 } else { f64::INFINITY },
        });
    }
    if n < p {
        return Ok(LstsqSolution {
            coefficients: min_norm(z, y)?,
            gram_condition: f64::INFINITY,
        });
    }

    let qr = z.clone().qr();
    let r = qr.r();
    let sv = r.clone().singular_values();
    let cond = condition_from(sv.as_slice());
    let gram_condition = cond * cond;

    if cond < MAX_REGRESSOR_CONDITION {
        let mut qty = y.clone();
        qr.q_tr_mul(&mut qty);
        let rhs = qty.rows(0, p).into_owned();
        let coefficients = r
            .solve_upper_triangular(&rhs)
            .ok_or(Error::Singular {
                condition: gram_condition,
            })?;
        return Ok(LstsqSolution {
            coefficients,
            gram_condition,
        });
    }

    let x = min_norm(z, y)?;
    let residual = (z * &x - y).norm();
    if residual <= 1e-10 * y.norm().max(1.0) {
        Ok(LstsqSolution {
            coefficients: x,
            gram_condition,
        })
    } else {
        Err(Error::Singular {
            condition: gram_condition,
        })
    }
}
