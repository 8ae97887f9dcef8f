use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
#[allow(unused_imports)]
use num_traits::Float as _;

use super::{axpy_slice, dot, Matrix};
use crate::error::{Error, Result};

/// Thin QR of a `rows x cols` matrix with `rows >= cols`, by modified
/// Gram-Schmidt with one re-orthogonalization pass. `Q` has orthonormal
/// columns; `R` is upper triangular with non-negative diagonal.
pub fn qr_thin(m: &Matrix) -> Result<(Matrix, Matrix)> {
    let (rows, cols) = m.shape();
    if rows < cols {
        return Err(Error::Shape(alloc::format!(
            "qr_thin needs rows >= cols, got {rows}x{cols}"
        )));
    }
    let mut q: Vec<Vec<f64>> = (0..cols).map(|j| m.column(j)).collect();
    let mut r = Matrix::zeros(cols, cols);
    for j in 0..cols {
        for _pass in 0..2 {
            for k in 0..j {
                let (done, rest) = q.split_at_mut(j);
                let proj = dot(&done[k], &rest[0]);
                axpy_slice(&mut rest[0], -proj, &done[k]);
                r[(k, j)] += proj;
            }
        }
        let norm = dot(&q[j], &q[j]).sqrt();
        if norm == 0.0 {
            return Err(Error::Shape(alloc::format!(
                "qr_thin: column {j} is linearly dependent"
            )));
        }
        q[j].iter_mut().for_each(|v| *v /= norm);
        r[(j, j)] = norm;
    }
    let qm = Matrix::from_fn(rows, cols, |i, j| q[j][i]);
    Ok((qm, r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::gaussian;

    #[test]
    fn orthonormal_and_reconstructs() {
        let m = gaussian(20, 6, 3);
        let (q, r) = qr_thin(&m).unwrap();
        let qtq = q.matmul_tn(&q).unwrap();
        assert!(qtq.sub(&Matrix::identity(6)).unwrap().max_abs() < 1e-14);
        assert!(q.matmul(&r).unwrap().sub(&m).unwrap().max_abs() < 1e-12);
        for i in 0..6 {
            for j in 0..i {
                assert_eq!(r[(i, j)], 0.0);
            }
        }
    }
}
