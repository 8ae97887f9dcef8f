//! Exact linear-model checks of how Muon interacts with augmentation.
//!
//! For `f(x) = Wx` under squared loss with input covariance `Σ`, the
//! population gradient factors as `G = EΣ` with `E = W − W*`. Augmentations
//! `x ↦ Aₖx` replace `Σ` by `Σ̃ = (1/K) Σₖ AₖΣAₖᵀ`. Gradient descent then
//! contracts `E` direction-by-direction at rates `1 − ηλᵢ(Σ̃)`, while a polar
//! step removes `Σ̃` entirely whenever `EᵀE = αI`.

use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
#[allow(unused_imports)]
use num_traits::Float as _;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, qr_thin, sym_eig, Matrix};
use crate::orthogonalize::polar_exact;

/// Tolerance on `‖E₀ᵀE₀ − αI‖_F` for a problem to count as exactly isotropic.
pub const ISOTROPY_TOLERANCE: f64 = 1e-10;

/// Growth of `‖E_t‖_F` over `‖E₀‖_F` beyond which a recursion is reported
/// as diverged.
pub const DIVERGENCE_GROWTH: f64 = 10.0;

#[derive(Clone, Debug, PartialEq)]
pub struct LinearProblem {
    /// Optimal weights `W*` (`m x d`).
    pub w_star: Matrix,
    /// Input covariance `Σ` (`d x d`).
    pub sigma: Matrix,
    /// Initial error `E₀ = W₀ − W*` (`m x d`).
    pub e0: Matrix,
    pub alpha: f64,
    /// Augmentation operators `Aₖ` (`d x d`); empty means no augmentation.
    pub aug_ops: Vec<Matrix>,
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// `m x d` matrix with orthonormal columns (`m ≥ d`), from QR of a Gaussian
/// draw.
pub fn random_orthonormal<R: Rng + ?Sized>(m: usize, d: usize, rng: &mut R) -> Result<Matrix> {
    Ok(qr_thin(&gaussian_matrix(m, d, rng))?.0)
}

/// Symmetric positive-definite `d x d` matrix whose eigenvalues are spaced
/// geometrically from 1 down to `1/cond`, in a random eigenbasis.
pub fn random_spd<R: Rng + ?Sized>(d: usize, cond: f64, rng: &mut R) -> Result<Matrix> {
    let q = random_orthonormal(d, d, rng)?;
    let mut qd = q.clone();
    for j in 0..d {
        let t = if d == 1 { 0.0 } else { j as f64 / (d - 1) as f64 };
        let lambda = cond.powf(-t);
        for i in 0..d {
            qd[(i, j)] *= lambda;
        }
    }
    qd.matmul_nt(&q)
}

impl LinearProblem {
    /// Problem with `E₀ = √α·Q` for orthonormal-column `Q`, so that
    /// `E₀ᵀE₀ = αI` holds exactly up to rounding.
    pub fn isotropic<R: Rng + ?Sized>(
        m: usize,
        d: usize,
        alpha: f64,
        sigma: Matrix,
        aug_ops: Vec<Matrix>,
        rng: &mut R,
    ) -> Result<Self> {
        if m < d {
            return Err(Error::Shape(alloc::format!(
                "isotropic error needs m >= d, got m={m}, d={d}"
            )));
        }
        if !(alpha > 0.0) {
            return Err(Error::Config(alloc::format!("alpha must be positive, got {alpha}")));
        }
        let w_star = gaussian_matrix(m, d, rng);
        let e0 = random_orthonormal(m, d, rng)?.scaled(alpha.sqrt());
        let p = Self {
            w_star,
            sigma,
            e0,
            alpha,
            aug_ops,
        };
        p.check_shapes()?;
        Ok(p)
    }

    fn check_shapes(&self) -> Result<()> {
        let d = self.w_star.cols();
        if self.sigma.shape() != (d, d) {
            return Err(Error::Dimension {
                op: "linear problem covariance",
                lhs: self.w_star.shape(),
                rhs: self.sigma.shape(),
            });
        }
        if self.e0.shape() != self.w_star.shape() {
            return Err(Error::Dimension {
                op: "linear problem error",
                lhs: self.w_star.shape(),
                rhs: self.e0.shape(),
            });
        }
        Ok(())
    }

    /// `‖E₀ᵀE₀ − αI‖_F`.
    pub fn isotropy_defect(&self) -> f64 {
        let g = self.e0.matmul_tn(&self.e0).expect("shapes checked");
        let mut a = Matrix::identity(g.rows());
        a.scale_in_place(self.alpha);
        g.sub(&a).expect("square").frobenius_norm()
    }

    pub fn is_exact_isotropic(&self) -> bool {
        self.isotropy_defect() <= ISOTROPY_TOLERANCE
    }

    /// `Σ̃`, or `Σ` itself when there are no augmentation operators.
    pub fn effective_cov(&self) -> Result<Matrix> {
        if self.aug_ops.is_empty() {
            Ok(self.sigma.clone())
        } else {
            augmented_cov(&self.sigma, &self.aug_ops)
        }
    }
}

/// Population gradient `(W − W*)·Σ`.
pub fn exact_gradient(p: &LinearProblem, w: &Matrix) -> Result<Matrix> {
    p.check_shapes()?;
    w.sub(&p.w_star)?.matmul(&p.sigma)
}

/// Monte Carlo estimate `(1/n) Σ (W − W*)xxᵀ` with `x ~ N(0, Σ)`.
pub fn sampled_gradient<R: Rng + ?Sized>(
    p: &LinearProblem,
    w: &Matrix,
    n: usize,
    rng: &mut R,
) -> Result<Matrix> {
    let d = p.sigma.rows();
    let l = cholesky(&p.sigma)?;
    let mut cov = Matrix::zeros(d, d);
    let mut x = alloc::vec![0.0; d];
    for _ in 0..n {
        let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        for i in 0..d {
            x[i] = (0..=i).map(|k| l[(i, k)] * z[k]).sum();
        }
        for i in 0..d {
            let row = cov.row_mut(i);
            for (j, v) in row.iter_mut().enumerate() {
                *v += x[i] * x[j];
            }
        }
    }
    cov.scale_in_place(1.0 / n as f64);
    w.sub(&p.w_star)?.matmul(&cov)
}

/// `Σ̃ = (1/K) Σₖ AₖΣAₖᵀ`.
pub fn augmented_cov(s: &Matrix, aug_ops: &[Matrix]) -> Result<Matrix> {
    if aug_ops.is_empty() {
        return Err(Error::Shape("augmented covariance needs at least one operator".into()));
    }
    let d = s.rows();
    let mut out = Matrix::zeros(d, d);
    for a in aug_ops {
        if a.shape() != (d, d) || !s.is_square() {
            return Err(Error::Dimension {
                op: "augmented_cov",
                lhs: s.shape(),
                rhs: a.shape(),
            });
        }
        out.axpy(1.0, &a.matmul(s)?.matmul_nt(a)?)?;
    }
    out.scale_in_place(1.0 / aug_ops.len() as f64);
    Ok(out)
}

fn require_full_rank(cov: &Matrix) -> Result<Vec<f64>> {
    let e = sym_eig(cov)?;
    let floor = e.values[0].abs() * cov.rows() as f64 * f64::EPSILON;
    if let Some(pivot) = e.values.iter().position(|l| !(*l > floor)) {
        return Err(Error::NotPositiveDefinite { pivot });
    }
    Ok(e.values)
}

/// `‖polar(E₀Σ̃) − E₀/√α‖_F / ‖E₀‖_F`.
pub fn muon_invariance_check(p: &LinearProblem) -> Result<f64> {
    p.check_shapes()?;
    let cov = p.effective_cov()?;
    require_full_rank(&cov)?;
    let polar = polar_exact(&p.e0.matmul(&cov)?)?;
    let target = p.e0.scaled(1.0 / p.alpha.sqrt());
    Ok(polar.sub(&target)?.frobenius_norm() / p.e0.frobenius_norm())
}

/// Error trajectory of one exact-dynamics recursion.
#[derive(Clone, Debug, PartialEq)]
pub struct RateReport {
    /// `‖E_t‖_F` for `t = 0..=steps` (shorter if the run diverged).
    pub error_norms: Vec<f64>,
    /// Geometric-mean per-step contraction `(‖E_T‖/‖E₀‖)^{1/T}`.
    pub fitted_factor: f64,
    /// Signed factor `⟨E_{t+1}, E_t⟩ / ‖E_t‖²` per step.
    pub step_factors: Vec<f64>,
    /// Per step, per eigendirection `hᵢ` of `Σ̃`:
    /// `⟨E_{t+1}hᵢ, E_t hᵢ⟩ / ‖E_t hᵢ‖²`.
    pub direction_factors: Vec<Vec<f64>>,
    pub diverged: bool,
}

/// Both recursions side by side, plus the eigenvalues of `Σ̃` the direction
/// factors refer to.
#[derive(Clone, Debug, PartialEq)]
pub struct RateComparison {
    pub eigenvalues: Vec<f64>,
    pub gd: RateReport,
    pub muon: RateReport,
}

impl RateComparison {
    /// `1 − η/√α`, the predicted first-step Muon factor.
    pub fn predicted_muon_factor(eta: f64, alpha: f64) -> f64 {
        1.0 - eta / alpha.sqrt()
    }
}

fn run_recursion(
    e0: &Matrix,
    h: &Matrix,
    steps: usize,
    mut next: impl FnMut(&Matrix) -> Result<Matrix>,
) -> Result<RateReport> {
    let n0 = e0.frobenius_norm();
    let mut e = e0.clone();
    let mut error_norms = alloc::vec![n0];
    let mut step_factors = Vec::with_capacity(steps);
    let mut direction_factors = Vec::with_capacity(steps);
    let mut diverged = false;
    for _ in 0..steps {
        let e_next = next(&e)?;
        let inner: f64 = e_next.data().iter().zip(e.data()).map(|(a, b)| a * b).sum();
        let sq: f64 = e.data().iter().map(|v| v * v).sum();
        step_factors.push(if sq > 0.0 { inner / sq } else { 0.0 });
        let eh = e.matmul(h)?;
        let eh_next = e_next.matmul(h)?;
        let factors = (0..h.cols())
            .map(|i| {
                let mut num = 0.0;
                let mut den = 0.0;
                for r in 0..eh.rows() {
                    num += eh_next[(r, i)] * eh[(r, i)];
                    den += eh[(r, i)] * eh[(r, i)];
                }
                if den > 0.0 {
                    num / den
                } else {
                    0.0
                }
            })
            .collect();
        direction_factors.push(factors);
        e = e_next;
        let n = e.frobenius_norm();
        error_norms.push(n);
        if !n.is_finite() || n > DIVERGENCE_GROWTH * n0 {
            diverged = true;
            break;
        }
    }
    let t = (error_norms.len() - 1) as f64;
    let last = *error_norms.last().expect("non-empty");
    let fitted_factor = if t == 0.0 || n0 == 0.0 {
        1.0
    } else {
        (last / n0).powf(1.0 / t)
    };
    Ok(RateReport {
        error_norms,
        fitted_factor,
        step_factors,
        direction_factors,
        diverged,
    })
}

/// Run `E_{t+1} = E_t(I − ηΣ̃)` (gradient descent) and
/// `E_{t+1} = E_t − η·polar(E_tΣ̃)` (Muon) from the same `E₀`.
pub fn rate_compare(p: &LinearProblem, eta: f64, steps: usize) -> Result<RateComparison> {
    p.check_shapes()?;
    let cov = p.effective_cov()?;
    let eig = sym_eig(&cov)?;
    let d = cov.rows();
    let mut step_map = Matrix::identity(d);
    step_map.axpy(-eta, &cov)?;
    let gd = run_recursion(&p.e0, &eig.vectors, steps, |e| e.matmul(&step_map))?;
    let muon = run_recursion(&p.e0, &eig.vectors, steps, |e| {
        let mut next = e.clone();
        next.axpy(-eta, &polar_exact(&e.matmul(&cov)?)?)?;
        Ok(next)
    })?;
    Ok(RateComparison {
        eigenvalues: eig.values,
        gd,
        muon,
    })
}
