//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Extreme eigenvalues `(min, max)` of a small symmetric row-major matrix.
pub fn sym_extremes(a: &[f64], dim: usize) -> (f64, f64) {
    if dim == 0 {
        return (f64::INFINITY, f64::NEG_INFINITY);
    }
    if dim == 1 {
        return (a[0], a[0]);
    }
    let e = SymmetricEigen::new(DMatrix::from_row_slice(dim, dim, a)).eigenvalues;
    e.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(*v), hi.max(*v))
        })
}

/// Smallest singular value of a row-major `rows × cols` matrix.
pub fn min_singular(a: &[f64], rows: usize, cols: usize) -> f64 {
    if rows == 1 && cols == 1 {
        return a[0].abs();
    }
    let m = DMatrix::from_row_slice(rows, cols, a);
    m.singular_values()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Solves the small square system `a x = b` (row-major `a`).
pub fn solve_small(a: &[f64], dim: usize, b: &[f64]) -> Result<Vec<f64>> {
    if dim == 1 {
        if a[0] == 0.0 {
            return Err(Error::Degenerate("singular 1×1 system".into()));
        }
        return Ok(vec![b[0] / a[0]]);
    }
    let m = DMatrix::from_row_slice(dim, dim, a);
    m.lu()
        .solve(&DVector::from_column_slice(b))
        .map(|x| x.iter().copied().collect())
        .ok_or_else(|| Error::Degenerate("singular local system".into()))
}

/// Cholesky factorization of a symmetric positive-definite matrix, with a
/// cheap two-sided condition estimate.
pub struct SpdFactor {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    dim: usize,
}

impl SpdFactor {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        let dim = m.nrows();
        let chol = m.cholesky().ok_or_else(|| {
            Error::Degenerate("matrix is not numerically positive definite".into())
        })?;
        Ok(SpdFactor { chol, dim })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.chol
            .solve(&DVector::from_column_slice(b))
            .iter()
            .copied()
            .collect()
    }

    /// Ratio of the extreme eigenvalues, from power and inverse iteration.
    pub fn condition_estimate(&self, m: &DMatrix<f64>, iters: usize) -> f64 {
        let start = DVector::from_fn(self.dim, |i, _| {
            1.0 + 0.37 * ((i * 7919) % 101) as f64 / 101.0
        });
        let mut x = start.normalize();
        let mut hi = 0.0;
        for _ in 0..iters {
            let y = m * &x;
            hi = y.norm();
            if hi == 0.0 {
                return f64::INFINITY;
            }
            x = y / hi;
        }
        let mut x = start.normalize();
        let mut inv = 0.0;
        for _ in 0..iters {
            let y = self.chol.solve(&x);
            inv = y.norm();
            x = y / inv;
        }
        hi * inv
    }
}
