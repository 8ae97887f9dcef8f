#[cfg(not(feature = "std"))]
#[allow(unused_imports)]
use num_traits::Float as _;

use super::Matrix;
use crate::error::{Error, Result};

/// Lower-triangular `C` with positive diagonal such that `g = C·Cᵀ`.
///
/// Fails with [`Error::NotSymmetric`] when `g` is asymmetric beyond the
/// symmetry tolerance, and with [`Error::NotPositiveDefinite`] naming the
/// (zero-based) pivot at which a non-positive value appeared.
pub fn cholesky(g: &Matrix) -> Result<Matrix> {
    if !g.is_finite() {
        return Err(Error::NonFinite("cholesky input"));
    }
    g.check_symmetric()?;
    let n = g.rows();
    let mut c = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = g[(j, j)];
        for k in 0..j {
            d -= c[(j, k)] * c[(j, k)];
        }
        if !(d > 0.0) {
            return Err(Error::NotPositiveDefinite { pivot: j });
        }
        let djj = d.sqrt();
        c[(j, j)] = djj;
        for i in j + 1..n {
            let mut s = g[(i, j)];
            for k in 0..j {
                s -= c[(i, k)] * c[(j, k)];
            }
            c[(i, j)] = s / djj;
        }
    }
    Ok(c)
}

/// Solve `L·X = B` for lower-triangular `L` by forward substitution.
pub fn solve_lower(l: &Matrix, b: &Matrix) -> Result<Matrix> {
    if !l.is_square() || l.rows() != b.rows() {
        return Err(Error::Dimension {
            op: "solve_lower",
            lhs: l.shape(),
            rhs: b.shape(),
        });
    }
    let n = l.rows();
    let mut x = b.clone();
    for i in 0..n {
        let lii = l[(i, i)];
        if lii == 0.0 {
            return Err(Error::NotPositiveDefinite { pivot: i });
        }
        for k in 0..i {
            let lik = l[(i, k)];
            if lik != 0.0 {
                let (head, tail) = x.data_mut().split_at_mut(i * b.cols());
                let src = &head[k * b.cols()..(k + 1) * b.cols()];
                super::axpy_slice(&mut tail[..b.cols()], -lik, src);
            }
        }
        x.row_mut(i).iter_mut().for_each(|v| *v /= lii);
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::gaussian;

    #[test]
    fn identity_factor() {
        assert_eq!(cholesky(&Matrix::identity(4)).unwrap(), Matrix::identity(4));
    }

    #[test]
    fn two_by_two_hand_factor() {
        let g = Matrix::from_rows(&[[4.0, 2.0], [2.0, 3.0]]);
        let c = cholesky(&g).unwrap();
        let expect = Matrix::from_rows(&[[2.0, 0.0], [1.0, 2f64.sqrt()]]);
        assert!(c.sub(&expect).unwrap().max_abs() < 1e-15);
        assert!(c.matmul_nt(&c).unwrap().sub(&g).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn indefinite_fails_at_pivot_one() {
        let g = Matrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]]);
        assert_eq!(
            cholesky(&g).unwrap_err(),
            Error::NotPositiveDefinite { pivot: 1 }
        );
    }

    #[test]
    fn asymmetric_rejected() {
        let g = Matrix::from_rows(&[[2.0, 1.0], [0.0, 2.0]]);
        assert!(matches!(cholesky(&g), Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn factor_of_cct_round_trips() {
        for seed in 0..10 {
            let mut l = gaussian(7, 7, seed);
            for i in 0..7 {
                for j in i + 1..7 {
                    l[(i, j)] = 0.0;
                }
                l[(i, i)] = l[(i, i)].abs() + 0.5;
            }
            let g = l.matmul_nt(&l).unwrap();
            let c = cholesky(&g).unwrap();
            assert!(c.sub(&l).unwrap().frobenius_norm() / l.frobenius_norm() < 1e-10);
        }
    }

    #[test]
    fn forward_substitution() {
        let l = Matrix::from_rows(&[[2.0, 0.0], [1.0, 4.0]]);
        let b = Matrix::from_rows(&[[2.0, 4.0], [5.0, 6.0]]);
        let x = solve_lower(&l, &b).unwrap();
        assert!(l.matmul(&x).unwrap().sub(&b).unwrap().max_abs() < 1e-15);
    }
}
