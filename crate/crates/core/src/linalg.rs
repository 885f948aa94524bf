use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

pub(crate) const EIGEN_FLOOR: f64 = 1e-10;

/// Symmetric inverse and inverse square root with eigenvalues floored at
/// `EIGEN_FLOOR`. Fails with the condition number when the matrix is
/// numerically singular.
pub(crate) fn sym_inverse_and_isqrt(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("information matrix has non-finite entries".into()));
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    let cond = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(max > 0.0) || cond > 1e14 {
        return Err(Error::Numerical(format!("information matrix is singular (condition number {cond:e})")));
    }
    let d = a.nrows();
    let mut inv = DMatrix::zeros(d, d);
    let mut isqrt = DMatrix::zeros(d, d);
    for k in 0..d {
        let lam = eig.eigenvalues[k].max(EIGEN_FLOOR);
        let v = eig.eigenvectors.column(k);
        let outer = v * v.transpose();
        inv += &outer / lam;
        isqrt += &outer / lam.sqrt();
    }
    Ok((inv, isqrt))
}
