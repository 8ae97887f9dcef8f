//! Shared helpers for unit tests.

use crate::linalg::Matrix;
use crate::rng;
use rand_distr::{Distribution, StandardNormal};

pub(crate) fn gaussian(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut r = rng::stream(seed, &[0xA1, rows as u64, cols as u64]);
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut r))
}

/// Random orthogonal `n x n` matrix.
pub(crate) fn orthogonal(n: usize, seed: u64) -> Matrix {
    crate::linalg::qr_thin(&gaussian(n, n, seed)).unwrap().0
}

/// `rows x cols` matrix with prescribed singular values (length min(rows, cols)).
pub(crate) fn with_spectrum(rows: usize, cols: usize, sigma: &[f64], seed: u64) -> Matrix {
    let r = rows.min(cols);
    assert_eq!(sigma.len(), r);
    let u = orthogonal(rows, seed);
    let v = orthogonal(cols, seed.wrapping_add(7_777));
    let mut out = Matrix::zeros(rows, cols);
    for k in 0..r {
        for i in 0..rows {
            let uik = u[(i, k)] * sigma[k];
            for j in 0..cols {
                out[(i, j)] += uik * v[(j, k)];
            }
        }
    }
    out
}
