//! Polar factors, their Newton-Schulz approximations, and the canonical
//! whitening transforms of a matrix update.
//!
//! For an update `M` (`k x d`) with Gram matrix `G = MMᵀ`, a whitening is a
//! left transform `W` with `W G Wᵀ = I`; the whitened update is `W M`. The
//! ZCA choice `W = G^{-1/2}` yields exactly the polar factor `UVᵀ`, which is
//! why only ZCA and its row-normalized sibling admit a cheap polynomial
//! (Newton-Schulz) approximation.

mod schedule;

pub use schedule::{NsCoeffSchedule, NsCoeffs, STANDARD_QUINTIC};

use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
#[allow(unused_imports)]
use num_traits::Float as _;

use crate::error::{Error, Result};
use crate::linalg::{cholesky, gemm_nn, gemm_nt, solve_lower, svd, sym_eig, Matrix};

/// Safety factor on the Frobenius pre-normalization; keeps the spectral norm
/// of the first iterate strictly below one.
pub const NS_NORM_SAFETY: f64 = 1.01;

/// Iterates whose Frobenius norm exceeds this multiple of `√min(rows, cols)`
/// are reported as diverged.
pub const NS_DIVERGENCE_FACTOR: f64 = 10.0;

/// Relative threshold (against the largest singular value, scaled by the
/// larger dimension and machine epsilon) under which a singular value is
/// treated as zero.
fn rank_threshold(m: &Matrix, top: f64) -> f64 {
    top * (m.rows().max(m.cols()) as f64) * f64::EPSILON
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum WhiteningKind {
    ZcaPolar,
    Pca,
    Cholesky,
    ZcaCor,
    PcaCor,
}

impl WhiteningKind {
    pub const ALL: [WhiteningKind; 5] = [
        WhiteningKind::ZcaPolar,
        WhiteningKind::Pca,
        WhiteningKind::Cholesky,
        WhiteningKind::ZcaCor,
        WhiteningKind::PcaCor,
    ];

    /// Whether a Newton-Schulz polynomial path exists for this whitening.
    pub fn has_iterative_path(self) -> bool {
        matches!(self, WhiteningKind::ZcaPolar | WhiteningKind::ZcaCor)
    }
}

/// Outcome of an exact polar decomposition.
#[derive(Clone, Debug, PartialEq)]
pub struct Polar {
    /// `U·Vᵀ` restricted to the nonzero singular values.
    pub factor: Matrix,
    /// Number of singular values treated as nonzero.
    pub rank: usize,
}

impl Polar {
    /// True when the input was rank-deficient (including the zero matrix),
    /// so the factor is a partial isometry rather than an orthogonal matrix.
    pub fn is_rank_deficient(&self) -> bool {
        self.rank < self.factor.rows().min(self.factor.cols())
    }
}

/// Exact polar factor `U·Vᵀ` from the thin SVD, with rank status.
pub fn polar_decompose(m: &Matrix) -> Result<Polar> {
    let (rows, cols) = m.shape();
    if m.is_zero() {
        return Ok(Polar {
            factor: Matrix::zeros(rows, cols),
            rank: 0,
        });
    }
    let s = svd(m)?;
    let tol = rank_threshold(m, s.sigma[0]);
    let rank = s.sigma.iter().take_while(|v| **v > tol).count();
    let mut factor = Matrix::zeros(rows, cols);
    for k in 0..rank {
        for i in 0..rows {
            let uik = s.u[(i, k)];
            let out = factor.row_mut(i);
            for (o, v) in out.iter_mut().zip(s.vt.row(k)) {
                *o += uik * v;
            }
        }
    }
    Ok(Polar { factor, rank })
}

/// Exact polar factor; the zero matrix maps to the zero matrix.
pub fn polar_exact(m: &Matrix) -> Result<Matrix> {
    polar_decompose(m).map(|p| p.factor)
}

/// Approximate polar factor by the given Newton-Schulz schedule.
///
/// The input is divided by `‖M‖_F · 1.01` first, so the result is invariant to
/// positive rescaling of `m`. Tall inputs are processed through their
/// transpose.
pub fn newton_schulz(m: &Matrix, schedule: &NsCoeffSchedule) -> Result<Matrix> {
    newton_schulz_observed(m, schedule, |_, _| {})
}

/// [`newton_schulz`] with a callback receiving `(iteration, iterate)` after
/// each step (iterates are in the wide orientation).
pub fn newton_schulz_observed(
    m: &Matrix,
    schedule: &NsCoeffSchedule,
    mut observe: impl FnMut(usize, &Matrix),
) -> Result<Matrix> {
    if !m.is_finite() {
        return Err(Error::NonFinite("newton_schulz input"));
    }
    if m.is_zero() {
        return Ok(Matrix::zeros(m.rows(), m.cols()));
    }
    let transposed = m.rows() > m.cols();
    let mut x = if transposed { m.transpose() } else { m.clone() };
    let norm = x.frobenius_norm() * NS_NORM_SAFETY;
    x.scale_in_place(1.0 / norm);

    let r = x.rows();
    let limit = NS_DIVERGENCE_FACTOR * (r as f64).sqrt();
    let mut gram = Matrix::zeros(r, r);
    let mut poly = Matrix::zeros(r, r);
    let mut next = Matrix::zeros(x.rows(), x.cols());
    for (i, c) in schedule.steps().iter().enumerate() {
        // gram = X Xᵀ ; poly = b·gram + c·gram² ; X ← a·X + poly·X
        gemm_nt(&x, &x, &mut gram, 1.0, 0.0);
        poly.data_mut().copy_from_slice(gram.data());
        poly.scale_in_place(c.b);
        if c.c != 0.0 {
            gemm_nn(&gram, &gram, &mut poly, c.c, 1.0);
        }
        next.data_mut().copy_from_slice(x.data());
        next.scale_in_place(c.a);
        gemm_nn(&poly, &x, &mut next, 1.0, 1.0);
        core::mem::swap(&mut x, &mut next);
        let fro = x.frobenius_norm();
        if !fro.is_finite() || fro > limit {
            return Err(Error::Divergence {
                iteration: i,
                norm: fro,
            });
        }
        observe(i, &x);
    }
    Ok(if transposed { x.transpose() } else { x })
}

/// Scale every row to unit Euclidean norm. Returns `D^{-1/2}M` and the
/// diagonal `d` with `dᵢ = ‖Mᵢ:‖²`.
pub fn row_normalize(m: &Matrix) -> Result<(Matrix, Vec<f64>)> {
    let mut out = m.clone();
    let mut d = Vec::with_capacity(m.rows());
    for i in 0..m.rows() {
        let row = out.row_mut(i);
        let sq: f64 = row.iter().map(|v| v * v).sum();
        if !(sq > 0.0) {
            return Err(Error::DegenerateRow { row: i });
        }
        let inv = 1.0 / sq.sqrt();
        row.iter_mut().for_each(|v| *v *= inv);
        d.push(sq);
    }
    Ok((out, d))
}

/// Exact whitening of `m` (`k x d`, full row rank) of the given kind.
///
/// Every kind returns `M̃ = W·M` with `M̃·M̃ᵀ = I`:
/// * `ZcaPolar`: `G^{-1/2} M = UVᵀ`
/// * `Pca`: `Σ⁻¹UᵀM = Vᵀ`
/// * `Cholesky`: `C⁻¹M` with `G = CCᵀ`
/// * `ZcaCor`: `P^{-1/2} D^{-1/2} M`, the polar factor of the row-normalized update
/// * `PcaCor`: `Θ^{-1/2} Hᵀ D^{-1/2} M` with `P = HΘHᵀ`
///
/// Rank-deficient Gram matrices are rejected rather than pseudo-inverted.
pub fn whiten(m: &Matrix, kind: WhiteningKind) -> Result<Matrix> {
    if !m.is_finite() {
        return Err(Error::NonFinite("whiten input"));
    }
    match kind {
        WhiteningKind::ZcaPolar => {
            let p = polar_decompose(m)?;
            require_full_row_rank(m, p.rank)?;
            Ok(p.factor)
        }
        WhiteningKind::Pca => {
            let s = svd(m)?;
            let rank = s
                .sigma
                .iter()
                .take_while(|v| **v > rank_threshold(m, s.sigma[0]))
                .count();
            require_full_row_rank(m, rank)?;
            // Σ⁻¹UᵀM, computed literally rather than read off Vᵀ.
            let mut ut_m = s.u.matmul_tn(m)?;
            for (k, sk) in s.sigma.iter().enumerate().take(m.rows()) {
                ut_m.row_mut(k).iter_mut().for_each(|v| *v /= sk);
            }
            Ok(ut_m)
        }
        WhiteningKind::Cholesky => {
            let g = m.matmul_nt(m)?;
            let c = cholesky(&g)?;
            solve_lower(&c, m)
        }
        WhiteningKind::ZcaCor => {
            let (n, _) = row_normalize(m)?;
            let p = polar_decompose(&n)?;
            require_full_row_rank(m, p.rank)?;
            Ok(p.factor)
        }
        WhiteningKind::PcaCor => {
            let (n, _) = row_normalize(m)?;
            let p = n.matmul_nt(&n)?;
            let e = sym_eig(&p)?;
            let floor = e.values[0] * (m.rows().max(m.cols()) as f64) * f64::EPSILON;
            if let Some(pivot) = e.values.iter().position(|l| !(*l > floor)) {
                return Err(Error::NotPositiveDefinite { pivot });
            }
            let mut out = e.vectors.matmul_tn(&n)?;
            for (k, l) in e.values.iter().enumerate() {
                let s = 1.0 / l.sqrt();
                out.row_mut(k).iter_mut().for_each(|v| *v *= s);
            }
            Ok(out)
        }
    }
}

fn require_full_row_rank(m: &Matrix, rank: usize) -> Result<()> {
    if rank < m.rows() {
        return Err(Error::NotPositiveDefinite { pivot: rank });
    }
    Ok(())
}
