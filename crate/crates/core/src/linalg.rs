//! Small dense linear-algebra helpers used throughout the crate.
//!
//! The public types are [`nalgebra`] matrices; eigensolves are delegated to
//! [`faer`] (much faster on the dense spectra this crate needs) so that
//! solver failures surface as [`Error`] values instead of panics and so that
//! returned spectra have a deterministic order.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Copy an `nalgebra` matrix into a `faer` one.
fn to_faer(m: &DMatrix<f64>) -> faer::Mat<f64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// `(M + Mᵀ)/2`.
///
/// Errors if `m` is not square.
pub fn symmetric_part(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "symmetric part requires a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok((m + m.transpose()) * 0.5)
}

/// Eigenvalues of a symmetric matrix, sorted ascending.
///
/// The caller is responsible for symmetry; only the lower triangle is read.
pub fn symmetric_eigenvalues_sorted(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "eigenvalues require a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let mut vals = to_faer(m)
        .self_adjoint_eigenvalues(faer::Side::Lower)
        .map_err(|e| Error::Eigen(format!("symmetric eigensolver failed: {e:?}")))?;
    vals.sort_by(|a, b| a.total_cmp(b));
    Ok(vals)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> Result<f64> {
    let vals = symmetric_eigenvalues_sorted(m)?;
    vals.first()
        .copied()
        .ok_or_else(|| Error::Dimension("empty matrix has no eigenvalues".into()))
}

/// Complex eigenvalues of a general real square matrix, sorted by descending
/// real part, then descending imaginary part (deterministic output).
pub fn complex_eigenvalues_sorted(m: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "eigenvalues require a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let mut vals: Vec<Complex64> = to_faer(m)
        .eigenvalues()
        .map_err(|e| Error::Eigen(format!("eigensolver failed: {e:?}")))?;
    vals.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
    Ok(vals)
}

/// Smallest eigenvalue of the symmetric 2x2 matrix `[[a, b], [b, d]]`.
pub fn sym2_min_eigenvalue(a: f64, d: f64, b: f64) -> f64 {
    let mid = 0.5 * (a + d);
    let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    mid - rad
}

/// Smallest eigenvalue of the Hermitian 2x2 matrix `[[a, b], [conj(b), d]]`
/// with real diagonal `a`, `d`.
pub fn herm2_min_eigenvalue(a: f64, d: f64, b: Complex64) -> f64 {
    let mid = 0.5 * (a + d);
    let rad = (0.25 * (a - d) * (a - d) + b.norm_sqr()).sqrt();
    mid - rad
}
