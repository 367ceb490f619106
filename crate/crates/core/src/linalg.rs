//! Small dense helpers shared by every module. All matrices here are tiny
//! (tens of rows at most), so clarity wins over blocking or reuse of buffers.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;

pub fn frobenius_sq(m: &Mat) -> f64 {
    m.iter().map(|v| v * v).sum()
}

pub fn all_finite(m: &Mat) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Spectral radius from the eigenvalue moduli of the real Schur form.
pub fn spectral_radius(m: &Mat) -> Result<f64> {
    if m.nrows() != m.ncols() {
        return Err(Error::dim(format!(
            "spectral radius of a non-square {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    if !all_finite(m) {
        return Err(Error::arg("matrix has non-finite entries"));
    }
    let schur = m.clone().try_schur(1e-14, 10_000).ok_or(Error::NoConvergence {
        solver: "Schur decomposition",
        iterations: 10_000,
        change: f64::NAN,
    })?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

/// Symmetric PSD square root. Eigenvalues below 1e-14 are clamped to zero.
pub fn sym_sqrt(m: &Mat) -> Mat {
    let sym = symmetrize(m);
    let eig = sym.symmetric_eigen();
    let roots = eig
        .eigenvalues
        .map(|l| if l < 1e-14 { 0.0 } else { l.sqrt() });
    &eig.eigenvectors * Mat::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn min_sym_eigenvalue(m: &Mat) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    symmetrize(m)
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// `[I, M, M^2, ..., M^count]`
pub fn powers(m: &Mat, count: usize) -> Vec<Mat> {
    let mut out = Vec::with_capacity(count + 1);
    out.push(Mat::identity(m.nrows(), m.ncols()));
    for k in 1..=count {
        let next = m * &out[k - 1];
        out.push(next);
    }
    out
}

pub fn kron(a: &Mat, b: &Mat) -> Mat {
    a.kronecker(b)
}

pub fn block_diag(blocks: &[&Mat]) -> Mat {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse(m: &Mat, what: &'static str) -> Result<Mat> {
    symmetrize(m)
        .cholesky()
        .map(|c| c.inverse())
        .ok_or(Error::NotPositiveDefinite(what))
}

pub fn from_rows(rows: &[&[f64]]) -> Mat {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, |r| r.len());
    Mat::from_fn(nrows, ncols, |i, j| rows[i][j])
}
