//! Small dense helpers on top of nalgebra shared by the estimators, the cone
//! computations and the simulation code.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative tolerance for the symmetry check.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Relative tolerance on negative eigenvalues for the PSD check.
pub const PSD_TOL: f64 = 1e-10;

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let p = m.nrows();
    let mut worst = 0.0_f64;
    for j in 0..p {
        for i in (j + 1)..p {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn ensure_square(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            found: m.ncols(),
        });
    }
    Ok(())
}

pub fn ensure_symmetric(m: &DMatrix<f64>) -> Result<()> {
    ensure_square(m)?;
    let asym = asymmetry(m);
    if asym > SYMMETRY_TOL * max_abs(m).max(f64::MIN_POSITIVE) {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    Ok(())
}

/// Eigendecomposition of the symmetric part of `m`.
pub fn sym_eigen(m: &DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym)
}

pub fn ensure_psd(m: &DMatrix<f64>) -> Result<()> {
    ensure_symmetric(m)?;
    if m.nrows() == 0 {
        return Ok(());
    }
    let eig = sym_eigen(m);
    let max = eig.eigenvalues.max().max(0.0);
    let min = eig.eigenvalues.min();
    if min < -PSD_TOL * max.max(f64::MIN_POSITIVE) {
        return Err(Error::NotPositiveSemidefinite {
            min_eigenvalue: min,
        });
    }
    Ok(())
}

/// Largest eigenvalue of a symmetric matrix (its spectral norm when PSD).
pub fn lambda_max(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    sym_eigen(m).eigenvalues.max()
}

pub fn lambda_min(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    sym_eigen(m).eigenvalues.min()
}

/// Rebuilds `V f(Λ) Vᵀ`, zeroing eigenvalues below `cutoff`.
pub fn spectral_map(m: &DMatrix<f64>, cutoff_rel: f64, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let p = m.nrows();
    let eig = sym_eigen(m);
    let top = eig.eigenvalues.iter().fold(0.0_f64, |a, &x| a.max(x));
    let cutoff = cutoff_rel * top;
    let mut out = DMatrix::zeros(p, p);
    for (k, &ev) in eig.eigenvalues.iter().enumerate() {
        if ev <= cutoff || ev <= 0.0 {
            continue;
        }
        let w = f(ev);
        let v = eig.eigenvectors.column(k);
        out += w * &v * v.transpose();
    }
    (&out + out.transpose()) * 0.5
}

pub fn quad_form(m: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    v.dot(&(m * v))
}

pub fn l1_norm(v: &DVector<f64>) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

pub fn sup_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |a, x| a.max(x.abs()))
}

pub fn sup_norm_matrix(m: &DMatrix<f64>) -> f64 {
    max_abs(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_check_rejects_skew() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(
            ensure_symmetric(&m),
            Err(Error::NotSymmetric { .. })
        ));
    }

    #[test]
    fn psd_check_rejects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            ensure_psd(&m),
            Err(Error::NotPositiveSemidefinite { .. })
        ));
    }

    #[test]
    fn spectral_map_inverts_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0]));
        let inv = spectral_map(&m, 1e-10, |x| 1.0 / x);
        assert!((inv[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((inv[(1, 1)] - 0.25).abs() < 1e-15);
    }
}
