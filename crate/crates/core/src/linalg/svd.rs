//! Thin SVD by one-sided (Hestenes) Jacobi rotations.

use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
#[allow(unused_imports)]
use num_traits::Float as _;

use super::{axpy_slice, canonical_sign, dot, Matrix};
use crate::error::{Error, Result};

/// Relative off-diagonal threshold `|aᵢ·aⱼ| / (‖aᵢ‖‖aⱼ‖)` below which a column
/// pair counts as orthogonal.
pub const SVD_TOLERANCE: f64 = 1e-12;

/// Sweep cap before reporting non-convergence.
pub const SVD_MAX_SWEEPS: usize = 60;

/// Thin singular value decomposition `m = u · diag(sigma) · vt`.
///
/// `u` is `rows x r`, `vt` is `r x cols` with `r = min(rows, cols)`, `sigma`
/// is non-increasing. Each left singular vector has its largest-magnitude
/// entry non-negative.
#[derive(Clone, Debug, PartialEq)]
pub struct SvdResult {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub vt: Matrix,
}

impl SvdResult {
    /// `u · diag(sigma) · vt`
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (j, s) in self.sigma.iter().enumerate() {
                us[(i, j)] *= s;
            }
        }
        us.matmul(&self.vt).expect("consistent factor shapes")
    }

    /// Number of singular values above `tol · sigma[0]`.
    pub fn rank(&self, tol: f64) -> usize {
        let top = self.sigma.first().copied().unwrap_or(0.0);
        if top == 0.0 {
            return 0;
        }
        self.sigma.iter().filter(|s| **s > tol * top).count()
    }
}

/// Thin SVD of a finite matrix.
pub fn svd(m: &Matrix) -> Result<SvdResult> {
    if !m.is_finite() {
        return Err(Error::NonFinite("svd input"));
    }
    if m.rows() < m.cols() {
        let t = svd_tall(&m.transpose())?;
        // mᵀ = U Σ Vᵀ  =>  m = V Σ Uᵀ, then re-canonicalize signs on the new U.
        let mut u = t.vt.transpose();
        let mut vt = t.u.transpose();
        fix_signs(&mut u, &mut vt);
        return Ok(SvdResult {
            u,
            sigma: t.sigma,
            vt,
        });
    }
    svd_tall(m)
}

/// One-sided Jacobi on a matrix with `rows >= cols`.
fn svd_tall(m: &Matrix) -> Result<SvdResult> {
    let (rows, n) = m.shape();
    // Columns of the working matrix, stored contiguously.
    let mut cols = m.transpose().into_vec();
    let mut v = Matrix::identity(n).into_vec(); // row j = column j of V
    let frob = m.frobenius_norm();
    let negligible = f64::EPSILON * frob;
    let negligible_sq = negligible * negligible;

    let mut converged = n < 2 || frob == 0.0;
    let mut worst = 0.0;
    let mut sweeps = 0;
    while !converged && sweeps < SVD_MAX_SWEEPS {
        sweeps += 1;
        worst = 0.0f64;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let (cp, cq) = split_pair(&mut cols, rows, p, q);
                let alpha = dot(cp, cp);
                let beta = dot(cq, cq);
                if alpha <= negligible_sq || beta <= negligible_sq {
                    continue;
                }
                let gamma = dot(cp, cq);
                let off = gamma.abs() / (alpha.sqrt() * beta.sqrt());
                if off <= SVD_TOLERANCE {
                    continue;
                }
                worst = worst.max(off);
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(cp, cq, c, s);
                let (vp, vq) = split_pair(&mut v, n, p, q);
                rotate(vp, vq, c, s);
            }
        }
        converged = worst <= SVD_TOLERANCE;
    }
    if !converged {
        return Err(Error::NoConvergence {
            op: "svd",
            sweeps,
            residual: worst,
        });
    }

    let norms: Vec<f64> = (0..n)
        .map(|j| {
            let c = &cols[j * rows..(j + 1) * rows];
            dot(c, c).sqrt()
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| norms[b].partial_cmp(&norms[a]).expect("finite norms"));

    let mut u = Matrix::zeros(rows, n);
    let mut vt = Matrix::zeros(n, n);
    let mut sigma = Vec::with_capacity(n);
    let mut missing = Vec::new();
    for (k, &j) in order.iter().enumerate() {
        let s = norms[j];
        sigma.push(s);
        vt.row_mut(k).copy_from_slice(&v[j * n..(j + 1) * n]);
        if s > negligible {
            let c = &cols[j * rows..(j + 1) * rows];
            for i in 0..rows {
                u[(i, k)] = c[i] / s;
            }
        } else {
            missing.push(k);
        }
    }
    complete_columns(&mut u, &missing);
    fix_signs(&mut u, &mut vt);
    Ok(SvdResult { u, sigma, vt })
}

fn split_pair(buf: &mut [f64], len: usize, p: usize, q: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(p < q);
    let (head, tail) = buf.split_at_mut(q * len);
    (&mut head[p * len..(p + 1) * len], &mut tail[..len])
}

#[inline]
fn rotate(x: &mut [f64], y: &mut [f64], c: f64, s: f64) {
    for (a, b) in x.iter_mut().zip(y.iter_mut()) {
        let (xa, yb) = (*a, *b);
        *a = c * xa - s * yb;
        *b = s * xa + c * yb;
    }
}

/// Fill the listed columns of `u` with unit vectors orthogonal to all other
/// columns (Gram-Schmidt over the standard basis, applied twice).
fn complete_columns(u: &mut Matrix, missing: &[usize]) {
    if missing.is_empty() {
        return;
    }
    let rows = u.rows();
    let mut filled: Vec<usize> = (0..u.cols()).filter(|k| !missing.contains(k)).collect();
    let mut basis = 0usize;
    for &k in missing {
        loop {
            assert!(basis < rows, "ran out of basis vectors while completing U");
            let mut cand = vec![0.0; rows];
            cand[basis] = 1.0;
            basis += 1;
            for _ in 0..2 {
                for &f in &filled {
                    let col = u.column(f);
                    let proj = dot(&cand, &col);
                    axpy_slice(&mut cand, -proj, &col);
                }
            }
            let norm = dot(&cand, &cand).sqrt();
            if norm > 1e-6 {
                for i in 0..rows {
                    u[(i, k)] = cand[i] / norm;
                }
                filled.push(k);
                break;
            }
        }
    }
}

/// Force the largest-magnitude entry of each column of `u` to be
/// non-negative, flipping the matching row of `vt`.
fn fix_signs(u: &mut Matrix, vt: &mut Matrix) {
    for k in 0..u.cols() {
        if canonical_sign(&u.column(k)) {
            for i in 0..u.rows() {
                u[(i, k)] = -u[(i, k)];
            }
            vt.row_mut(k).iter_mut().for_each(|x| *x = -*x);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::gaussian;
    use proptest::prelude::*;

    fn orthonormality_error(q: &Matrix) -> f64 {
        let g = q.matmul_tn(q).unwrap();
        g.sub(&Matrix::identity(g.rows())).unwrap().max_abs()
    }

    fn check(m: &Matrix) {
        let r = svd(m).unwrap();
        let k = m.rows().min(m.cols());
        assert_eq!(r.u.shape(), (m.rows(), k));
        assert_eq!(r.vt.shape(), (k, m.cols()));
        let rel = r.reconstruct().sub(m).unwrap().frobenius_norm() / m.frobenius_norm().max(1e-300);
        assert!(rel < 1e-10, "reconstruction {rel}");
        assert!(orthonormality_error(&r.u) < 1e-10);
        assert!(orthonormality_error(&r.vt.transpose()) < 1e-10);
        assert!(r.sigma.windows(2).all(|w| w[0] >= w[1]));
        assert!(r.sigma.iter().all(|s| *s >= 0.0));
    }

    #[test]
    fn diagonal_case() {
        let r = svd(&Matrix::diag(&[3.0, 1.0])).unwrap();
        assert_eq!(r.sigma, vec![3.0, 1.0]);
        assert_eq!(r.u, Matrix::identity(2));
        assert_eq!(r.vt, Matrix::identity(2));
    }

    #[test]
    fn zero_matrix() {
        let r = svd(&Matrix::zeros(4, 4)).unwrap();
        assert_eq!(r.sigma, vec![0.0; 4]);
        assert!(orthonormality_error(&r.u) < 1e-12);
    }

    #[test]
    fn random_16x9_reconstructs() {
        check(&gaussian(16, 9, 11));
        check(&gaussian(9, 16, 12));
    }

    #[test]
    fn rank_deficient_inputs_keep_orthonormal_factors() {
        let a = gaussian(10, 3, 1);
        let b = gaussian(3, 7, 2);
        let m = a.matmul(&b).unwrap();
        check(&m);
        let r = svd(&m).unwrap();
        assert_eq!(r.rank(1e-10), 3);
    }

    #[test]
    fn orthogonal_matrix_has_unit_singular_values() {
        let q = svd(&gaussian(12, 12, 5)).unwrap().u;
        let s = svd(&q).unwrap().sigma;
        assert!(s.iter().all(|x| (x - 1.0).abs() < 1e-10));
    }

    #[test]
    fn sign_convention_is_deterministic() {
        let m = gaussian(6, 4, 9);
        let r = svd(&m).unwrap();
        for k in 0..4 {
            let col = r.u.column(k);
            let big = col.iter().cloned().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
            assert!(big >= 0.0);
        }
        assert_eq!(svd(&m.scaled(-1.0)).unwrap().u, r.u);
    }

    #[test]
    fn rejects_non_finite() {
        let mut m = Matrix::identity(2);
        m[(0, 1)] = f64::NAN;
        assert_eq!(svd(&m).unwrap_err(), Error::NonFinite("svd input"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn reconstruction_property(rows in 1usize..40, cols in 1usize..40, seed in 0u64..1000) {
            check(&gaussian(rows, cols, seed));
        }
    }
}
