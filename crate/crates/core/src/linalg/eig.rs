//! Symmetric eigendecomposition by cyclic two-sided Jacobi rotations.

use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
#[allow(unused_imports)]
use num_traits::Float as _;

use super::{canonical_sign, Matrix};
use crate::error::{Error, Result};

const EIG_TOLERANCE: f64 = 1e-15;
const EIG_MAX_SWEEPS: usize = 60;

/// `g = H · diag(values) · Hᵀ` with `values` non-increasing and `vectors`
/// (`H`) having orthonormal columns.
#[derive(Clone, Debug, PartialEq)]
pub struct SymEig {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

impl SymEig {
    pub fn reconstruct(&self) -> Matrix {
        let n = self.values.len();
        let mut hd = self.vectors.clone();
        for i in 0..n {
            for (j, v) in self.values.iter().enumerate() {
                hd[(i, j)] *= v;
            }
        }
        hd.matmul_nt(&self.vectors).expect("square factors")
    }

    /// `λ_max / λ_min`, infinite when the smallest eigenvalue is not positive.
    pub fn condition_number(&self) -> f64 {
        let hi = self.values.first().copied().unwrap_or(0.0);
        let lo = self.values.last().copied().unwrap_or(0.0);
        if lo <= 0.0 {
            f64::INFINITY
        } else {
            hi / lo
        }
    }
}

/// Eigendecomposition of a symmetric matrix.
pub fn sym_eig(g: &Matrix) -> Result<SymEig> {
    if !g.is_finite() {
        return Err(Error::NonFinite("sym_eig input"));
    }
    g.check_symmetric()?;
    let n = g.rows();
    // Work on the exactly symmetrized copy.
    let mut a = Matrix::from_fn(n, n, |i, j| 0.5 * (g[(i, j)] + g[(j, i)]));
    let mut v = Matrix::identity(n);
    let total = a.frobenius_norm();

    let off_norm = |a: &Matrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                s += a[(i, j)] * a[(i, j)];
            }
        }
        (2.0 * s).sqrt()
    };

    let mut sweeps = 0;
    let mut off = off_norm(&a);
    while off > EIG_TOLERANCE * total && sweeps < EIG_MAX_SWEEPS {
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // A <- Jᵀ A J with J the (p, q) rotation.
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
        off = off_norm(&a);
    }
    if off > EIG_TOLERANCE * total {
        return Err(Error::NoConvergence {
            op: "sym_eig",
            sweeps,
            residual: off / total,
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].partial_cmp(&a[(i, i)]).expect("finite"));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (k, &j) in order.iter().enumerate() {
        let mut col = v.column(j);
        if canonical_sign(&col) {
            col.iter_mut().for_each(|x| *x = -*x);
        }
        for i in 0..n {
            vectors[(i, k)] = col[i];
        }
    }
    Ok(SymEig { values, vectors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::svd;
    use crate::testutil::gaussian;

    #[test]
    fn diagonal_inputs() {
        let e = sym_eig(&Matrix::diag(&[5.0, 2.0, 1.0])).unwrap();
        assert_eq!(e.values, vec![5.0, 2.0, 1.0]);
        let e = sym_eig(&Matrix::identity(3)).unwrap();
        assert_eq!(e.values, vec![1.0, 1.0, 1.0]);
        let e = sym_eig(&Matrix::diag(&[1.0, 3.0])).unwrap();
        assert_eq!(e.values, vec![3.0, 1.0]);
    }

    #[test]
    fn random_symmetric_reconstructs() {
        for seed in 0..10 {
            let b = gaussian(10, 10, seed);
            let g = b.add(&b.transpose()).unwrap();
            let e = sym_eig(&g).unwrap();
            let rel = e.reconstruct().sub(&g).unwrap().frobenius_norm() / g.frobenius_norm();
            assert!(rel < 1e-10, "{rel}");
            let hth = e.vectors.matmul_tn(&e.vectors).unwrap();
            assert!(hth.sub(&Matrix::identity(10)).unwrap().max_abs() < 1e-10);
            assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn gram_eigenvalues_are_squared_singular_values() {
        for seed in 0..10 {
            let m = gaussian(12, 7, seed);
            let e = sym_eig(&m.matmul_tn(&m).unwrap()).unwrap();
            let s = svd(&m).unwrap().sigma;
            let top = s[0] * s[0];
            for (l, s) in e.values.iter().zip(&s) {
                assert!((l - s * s).abs() / top < 1e-8);
            }
        }
    }

    #[test]
    fn asymmetric_rejected() {
        let g = Matrix::from_rows(&[[1.0, 2.0], [0.0, 1.0]]);
        assert!(matches!(sym_eig(&g), Err(Error::NotSymmetric { .. })));
    }
}
