//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Replaces `m` by `(m + mᵀ) / 2`.
pub fn symmetrize<T: Real>(m: &mut DMatrix<T>) {
    let n = m.nrows();
    let half = T::lit(0.5);
    for i in 0..n {
        for j in (i + 1)..n {
            let s = (m[(i, j)] + m[(j, i)]) * half;
            m[(i, j)] = s;
            m[(j, i)] = s;
        }
    }
}

pub fn symmetrized<T: Real>(mut m: DMatrix<T>) -> DMatrix<T> {
    symmetrize(&mut m);
    m
}

pub fn is_exactly_symmetric<T: Real>(m: &DMatrix<T>) -> bool {
    m.is_square() && (0..m.nrows()).all(|i| (0..i).all(|j| m[(i, j)] == m[(j, i)]))
}

/// Largest absolute entry (zero for empty input).
pub fn max_abs<T: Real>(m: &DMatrix<T>) -> T {
    m.iter().fold(T::zero(), |acc, x| acc.max(x.abs()))
}

pub fn max_abs_vec<T: Real>(v: &DVector<T>) -> T {
    v.iter().fold(T::zero(), |acc, x| acc.max(x.abs()))
}

/// Positive definiteness of the symmetric part, by Cholesky factorisation.
pub fn is_positive_definite<T: Real>(m: &DMatrix<T>) -> bool {
    m.is_square() && symmetrized(m.clone()).cholesky().is_some()
}

pub fn min_eigenvalue<T: Real>(m: &DMatrix<T>) -> T {
    let eig = SymmetricEigen::new(symmetrized(m.clone()));
    eig.eigenvalues.iter().fold(T::max_value().unwrap(), |acc, &x| acc.min(x))
}

/// Symmetric square root of a positive semidefinite matrix; negative
/// eigenvalues from round-off are clamped at zero.
pub fn psd_sqrt<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    let eig = SymmetricEigen::new(symmetrized(m.clone()));
    let d = eig.eigenvalues.map(|x| x.max(T::zero()).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// Symmetrises and clamps negative eigenvalues at zero. Returns whether any
/// eigenvalue had to be clamped.
pub fn repair_psd<T: Real>(m: &DMatrix<T>) -> (DMatrix<T>, bool) {
    let eig = SymmetricEigen::new(symmetrized(m.clone()));
    if eig.eigenvalues.iter().all(|&x| x >= T::zero()) {
        return (symmetrized(m.clone()), false);
    }
    let d = eig.eigenvalues.map(|x| x.max(T::zero()));
    let fixed = &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose();
    (symmetrized(fixed), true)
}

pub fn inverse<T: Real>(m: &DMatrix<T>, what: &'static str, t: T) -> Result<DMatrix<T>> {
    m.clone().try_inverse().ok_or(Error::Singular { what, t: t.as_f64() })
}

pub fn trace_product<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> T {
    let mut s = T::zero();
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            s += a[(i, j)] * b[(j, i)];
        }
    }
    s
}

pub fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 {
        return Err(Error::Validation(format!("{what} must be a non-empty matrix")));
    }
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Validation(format!("{what} has ragged rows")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn cast_matrix<T: Real>(m: &DMatrix<f64>) -> DMatrix<T> {
    m.map(T::lit)
}

pub fn cast_vector<T: Real>(v: &DVector<f64>) -> DVector<T> {
    v.map(T::lit)
}
