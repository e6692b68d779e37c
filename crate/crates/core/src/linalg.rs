//! Small dense linear-algebra helpers shared by the filter layers.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{FilterError, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Unit vector `e_i` of length `n`.
pub fn basis(n: usize, i: usize) -> Vector {
    let mut e = Vector::zeros(n);
    e[i] = 1.0;
    e
}

/// Matrix exponential (scaling and squaring with a Padé core).
pub fn expm(m: &Matrix) -> Result<Matrix> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(FilterError::Divergence {
            stage: "matrix exponential",
            step: 0,
        });
    }
    Ok(m.exp())
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Largest absolute entry of `m - m^T` relative to the largest entry of `m`.
pub fn asymmetry(m: &Matrix) -> f64 {
    let scale = m.amax();
    if scale == 0.0 {
        return 0.0;
    }
    (m - m.transpose()).amax() / scale
}

pub fn is_symmetric(m: &Matrix, rel_tol: f64) -> bool {
    m.is_square() && asymmetry(m) <= rel_tol
}

/// Eigenvalues of the symmetric part of `m`, ascending.
pub fn sym_eigenvalues(m: &Matrix) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// PSD test with the usual floor `min eig >= -tol * max eig`.
pub fn is_psd(m: &Matrix, tol: f64) -> bool {
    if m.nrows() == 0 {
        return true;
    }
    let ev = sym_eigenvalues(m);
    let max = ev.last().copied().unwrap_or(0.0).max(0.0);
    ev[0] >= -tol * max
}

/// Symmetrize and clip negative eigenvalues at zero. Returns the repaired
/// matrix and the number of clipped eigenvalues.
pub fn repair_psd(m: &Matrix) -> (Matrix, usize) {
    let s = symmetrize(m);
    let eig = SymmetricEigen::new(s.clone());
    let clipped = eig.eigenvalues.iter().filter(|&&l| l < 0.0).count();
    if clipped == 0 {
        return (s, 0);
    }
    let lambda = eig.eigenvalues.map(|l| l.max(0.0));
    let q = &eig.eigenvectors;
    let r = q * Matrix::from_diagonal(&lambda) * q.transpose();
    (symmetrize(&r), clipped)
}

/// Symmetric square root of a symmetric positive semi-definite matrix.
pub fn sym_sqrt(m: &Matrix) -> Result<Matrix> {
    let n = m.nrows();
    if n == 1 {
        let v = m[(0, 0)];
        if v < 0.0 || !v.is_finite() {
            return Err(FilterError::SingularMetric(format!(
                "negative variance {v} has no square root"
            )));
        }
        return Ok(Matrix::from_element(1, 1, v.sqrt()));
    }
    if is_diagonal(m) {
        let mut r = Matrix::zeros(n, n);
        for i in 0..n {
            let v = m[(i, i)];
            if v < 0.0 || !v.is_finite() {
                return Err(FilterError::SingularMetric(format!(
                    "negative diagonal entry {v} has no square root"
                )));
            }
            r[(i, i)] = v.sqrt();
        }
        return Ok(r);
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let max = eig.eigenvalues.amax();
    if eig.eigenvalues.iter().any(|&l| l < -1e-10 * max) {
        return Err(FilterError::SingularMetric(
            "matrix is not positive semi-definite".into(),
        ));
    }
    let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let q = &eig.eigenvectors;
    Ok(symmetrize(&(q * Matrix::from_diagonal(&root) * q.transpose())))
}

fn is_diagonal(m: &Matrix) -> bool {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if i != j && m[(i, j)] != 0.0 {
                return false;
            }
        }
    }
    true
}

/// 2-norm condition number via singular values.
pub fn condition_number(m: &Matrix) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Inverse of a symmetric positive-definite matrix, failing with a
/// singular-metric error otherwise.
pub fn spd_inverse(m: &Matrix, what: &str) -> Result<Matrix> {
    if !is_symmetric(m, 1e-12) {
        return Err(FilterError::InvalidInput(format!("{what} is not symmetric")));
    }
    m.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| FilterError::SingularMetric(format!("{what} is not positive definite")))
}

pub fn all_finite(v: &Vector) -> bool {
    v.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repair_clips_negative_eigenvalues() {
        let m = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let (r, clipped) = repair_psd(&m);
        assert_eq!(clipped, 1);
        assert!(is_psd(&r, 1e-12));
        // the positive eigenpair (3, [1,1]/sqrt2) survives
        assert!((r[(0, 0)] - 1.5).abs() < 1e-12);
        assert!((r[(0, 1)] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn sqrt_squares_back() {
        let m = Matrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let r = sym_sqrt(&m).unwrap();
        assert!((&r * &r - &m).amax() < 1e-12);
        assert!(sym_sqrt(&Matrix::from_row_slice(2, 2, &[1.0, 3.0, 3.0, 1.0])).is_err());
    }

    #[test]
    fn diagonal_sqrt_is_exact() {
        let m = Matrix::from_diagonal(&Vector::from_vec(vec![1e-20, 4.0]));
        let r = sym_sqrt(&m).unwrap();
        assert_eq!(r[(0, 0)], 1e-10);
        assert_eq!(r[(1, 1)], 2.0);
    }

    #[test]
    fn expm_rejects_nan() {
        let m = Matrix::from_element(2, 2, f64::NAN);
        assert!(matches!(expm(&m), Err(FilterError::Divergence { .. })));
    }

    #[test]
    fn spd_inverse_errors() {
        let bad = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 1.0]);
        assert!(matches!(spd_inverse(&bad, "b"), Err(FilterError::InvalidInput(_))));
        let sing = Matrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(spd_inverse(&sing, "b"), Err(FilterError::SingularMetric(_))));
    }
}
