//! Small dense symmetric solves shared by the Cox and logistic engines.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Relative pivot floor below which an information matrix counts as singular.
const PIVOT_FLOOR: f64 = 1e-12;

pub(crate) struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
}

impl SpdFactor {
    /// Factors a row-major `p x p` symmetric matrix.
    pub fn new(matrix: &[f64], p: usize) -> Result<Self> {
        let m = DMatrix::from_row_slice(p, p, matrix);
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularInformation);
        }
        let max_diag = (0..p).map(|i| m[(i, i)]).fold(0.0, f64::max);
        if max_diag <= 0.0 {
            return Err(Error::SingularInformation);
        }
        let chol = m.cholesky().ok_or(Error::SingularInformation)?;
        let l = chol.l_dirty();
        for i in 0..p {
            if l[(i, i)] * l[(i, i)] < PIVOT_FLOOR * max_diag {
                return Err(Error::SingularInformation);
            }
        }
        Ok(Self { chol })
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let b = DVector::from_column_slice(rhs);
        self.chol.solve(&b).as_slice().to_vec()
    }

    /// Row-major inverse.
    pub fn inverse(&self) -> Vec<f64> {
        let inv = self.chol.inverse();
        let p = inv.nrows();
        let mut out = vec![0.0; p * p];
        for i in 0..p {
            for j in 0..p {
                // symmetrize away round-off
                out[i * p + j] = 0.5 * (inv[(i, j)] + inv[(j, i)]);
            }
        }
        out
    }
}

/// Copies the lower triangle of a row-major `p x p` matrix onto the upper.
pub(crate) fn mirror_lower(m: &mut [f64], p: usize) {
    for j in 0..p {
        for k in 0..j {
            m[k * p + j] = m[j * p + k];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_and_inverts() {
        let a = [4.0, 2.0, 2.0, 3.0];
        let f = SpdFactor::new(&a, 2).unwrap();
        let x = f.solve(&[2.0, 1.0]);
        assert!((x[0] - 0.5).abs() < 1e-14 && x[1].abs() < 1e-14);
        let inv = f.inverse();
        assert!((inv[0] - 0.375).abs() < 1e-14);
        assert!((inv[1] + 0.25).abs() < 1e-14);
    }

    #[test]
    fn rank_deficient_is_singular() {
        let a = [1.0, 1.0, 1.0, 1.0];
        assert!(matches!(SpdFactor::new(&a, 2), Err(Error::SingularInformation)));
    }
}
