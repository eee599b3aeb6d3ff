//! Factorizations backed by `nalgebra`.

use nalgebra::DMatrix;

use super::{Matrix, NumericsError};

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn from_na(m: &DMatrix<f64>) -> Matrix {
    Matrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Lower-triangular `L` with `a = L Lᵀ`.
pub fn cholesky(a: &Matrix) -> Result<Matrix, NumericsError> {
    if a.rows() != a.cols() {
        return Err(NumericsError::NotSquare(a.shape()));
    }
    nalgebra::Cholesky::new(to_na(a))
        .map(|c| from_na(&c.l()))
        .ok_or(NumericsError::NotPositiveDefinite)
}

/// Solves `a x = b` for square `a` via LU with partial pivoting.
pub fn solve(a: &Matrix, b: &Matrix) -> Result<Matrix, NumericsError> {
    if a.rows() != a.cols() {
        return Err(NumericsError::NotSquare(a.shape()));
    }
    to_na(a)
        .lu()
        .solve(&to_na(b))
        .map(|x| from_na(&x))
        .ok_or(NumericsError::Singular)
}

pub fn inverse(a: &Matrix) -> Result<Matrix, NumericsError> {
    if a.rows() != a.cols() {
        return Err(NumericsError::NotSquare(a.shape()));
    }
    to_na(a)
        .try_inverse()
        .map(|x| from_na(&x))
        .ok_or(NumericsError::Singular)
}

/// Singular values in descending order.
pub fn singular_values(a: &Matrix) -> Vec<f64> {
    let mut s: Vec<f64> = to_na(a).singular_values().iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// `σ_min / σ_max`; zero for a zero matrix.
pub fn reciprocal_condition(a: &Matrix) -> f64 {
    let s = singular_values(a);
    match (s.first(), s.last()) {
        (Some(&max), Some(&min)) if max > 0.0 => min / max,
        _ => 0.0,
    }
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_eigenvalues(a: &Matrix) -> Vec<f64> {
    let mut e: Vec<f64> = to_na(a)
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .collect();
    e.sort_by(f64::total_cmp);
    e
}

/// Solves `L x = b` for lower-triangular `L`, one right-hand side per row of `b`
/// (i.e. returns `b L⁻ᵀ`).
pub fn forward_substitute_rows(l: &Matrix, b: &Matrix) -> Matrix {
    let n = l.rows();
    assert_eq!(b.cols(), n);
    let mut out = b.clone();
    for r in 0..b.rows() {
        let row = out.row_mut(r);
        for i in 0..n {
            let mut acc = row[i];
            for k in 0..i {
                acc -= l[(i, k)] * row[k];
            }
            row[i] = acc / l[(i, i)];
        }
    }
    out
}
