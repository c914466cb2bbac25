//! Dense helpers: thresholded pseudo-inverse of symmetric PSD blocks, stationary Lyapunov solve.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, SymmetricEigen};

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoInverse {
    pub inverse: DMatrix<f64>,
    /// Sum of logs of the retained singular values.
    pub log_pseudo_det: f64,
    pub rank: usize,
}

/// Moore-Penrose inverse of a symmetric block, dropping singular values below sbar * n * s_max.
/// The block is symmetric, so its singular vectors are its eigenvectors and s_j = |lambda_j|.
pub fn pseudo_inverse(block: &DMatrix<f64>, sbar: f64) -> Result<PseudoInverse> {
    let n = block.nrows();
    if n == 0 || block.ncols() != n {
        return Err(Error::Invalid("pseudo-inverse needs a nonempty square block".into()));
    }
    if block.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(0));
    }
    let sym = (block + block.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let smax = eig.eigenvalues.iter().fold(0.0f64, |a, &l| a.max(l.abs()));
    let tol = sbar * n as f64 * smax;
    let mut inverse = DMatrix::zeros(n, n);
    let mut log_pseudo_det = 0.0;
    let mut rank = 0;
    for (j, &l) in eig.eigenvalues.iter().enumerate() {
        if l.abs() > tol && l.abs() > 0.0 {
            let v = eig.eigenvectors.column(j);
            inverse += (v * v.transpose()) / l;
            log_pseudo_det += l.abs().ln();
            rank += 1;
        }
    }
    if rank == 0 {
        return Err(Error::DegenerateBlock);
    }
    Ok(PseudoInverse { inverse, log_pseudo_det, rank })
}

/// Solves P = T P T' + Q for P via the Kronecker form.
pub fn stationary_covariance(t: &DMatrix<f64>, q: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = t.nrows();
    let a = DMatrix::identity(n * n, n * n) - t.kronecker(t);
    let vq = nalgebra::DVector::from_column_slice(q.as_slice());
    let vp = a.lu().solve(&vq)?;
    let p = DMatrix::from_column_slice(n, n, vp.as_slice());
    Some((&p + p.transpose()) * 0.5)
}

/// log determinant and inverse of a symmetric positive definite matrix.
pub fn spd_inverse(m: &DMatrix<f64>) -> Option<(DMatrix<f64>, f64)> {
    let ch = m.clone().cholesky()?;
    let logdet = 2.0 * ch.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>();
    Some((ch.inverse(), logdet))
}
