use alloc::format;

#[cfg(not(feature = "std"))]
#[allow(unused_imports)]
use num_traits::Float as _;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::orthogonalize::{newton_schulz, row_normalize, whiten, NsCoeffSchedule, WhiteningKind};

/// How the momentum matrix is turned into an update direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum MatrixRule {
    /// Newton-Schulz approximation of the polar factor (plain Muon).
    NewtonSchulz,
    /// Exact Cholesky whitening `C⁻¹M`.
    Cholesky,
    /// Row normalization followed by Newton-Schulz.
    ZcaCor,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MuonConfig {
    pub lr: f64,
    pub beta: f64,
    pub schedule: NsCoeffSchedule,
    pub rms_scale: f64,
    pub weight_decay: f64,
}

impl Default for MuonConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta: 0.95,
            schedule: NsCoeffSchedule::standard(),
            rms_scale: 0.2,
            weight_decay: 0.0,
        }
    }
}

impl MuonConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("muon lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::Config(format!("muon beta must be in [0, 1), got {}", self.beta)));
        }
        if !(self.rms_scale >= 0.0 && self.rms_scale.is_finite()) {
            return Err(Error::Config(format!("rms_scale must be non-negative, got {}", self.rms_scale)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }

    /// Multiplier on the orthogonalized direction: `rms_scale · √max(rows, cols)`.
    pub fn direction_scale(&self, rows: usize, cols: usize) -> f64 {
        self.rms_scale * (rows.max(cols) as f64).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MuonState {
    /// Momentum accumulator `V_t`.
    pub v: Matrix,
    pub step: u64,
}

impl MuonState {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            v: Matrix::zeros(rows, cols),
            step: 0,
        }
    }
}

/// Orthogonalized (or whitened) direction of a momentum matrix.
pub fn matrix_direction(m: &Matrix, rule: MatrixRule, schedule: &NsCoeffSchedule) -> Result<Matrix> {
    match rule {
        MatrixRule::NewtonSchulz => newton_schulz(m, schedule),
        // Whitenings act on the row Gram matrix; tall momenta are handled in
        // their wide orientation so that Gram is invertible.
        MatrixRule::Cholesky | MatrixRule::ZcaCor => {
            let tall = m.rows() > m.cols();
            let wide = if tall { m.transpose() } else { m.clone() };
            let d = if rule == MatrixRule::Cholesky {
                whiten(&wide, WhiteningKind::Cholesky)?
            } else {
                let (n, _) = row_normalize(&wide)?;
                newton_schulz(&n, schedule)?
            };
            Ok(if tall { d.transpose() } else { d })
        }
    }
}

fn check_shapes(w: &Matrix, g: &Matrix, v: &Matrix) -> Result<()> {
    if w.shape() != g.shape() {
        return Err(Error::Dimension {
            op: "muon step (weight vs gradient)",
            lhs: w.shape(),
            rhs: g.shape(),
        });
    }
    if w.shape() != v.shape() {
        return Err(Error::Dimension {
            op: "muon step (weight vs momentum)",
            lhs: w.shape(),
            rhs: v.shape(),
        });
    }
    if !g.is_finite() {
        return Err(Error::NonFinite("muon gradient"));
    }
    Ok(())
}

/// One in-place Muon-family step at learning rate `lr`:
///
/// ```text
/// V_t = β V_{t-1} + G_t
/// M_t = G_t + β V_t
/// W  ← W (1 − lr·wd) − lr · scale · 𝔒(M_t)
/// ```
///
/// Returns `M_t`. On error neither `w` nor `state` is modified.
pub fn muon_update(
    w: &mut Matrix,
    g: &Matrix,
    state: &mut MuonState,
    cfg: &MuonConfig,
    lr: f64,
    rule: MatrixRule,
) -> Result<Matrix> {
    check_shapes(w, g, &state.v)?;
    let mut v = state.v.scaled(cfg.beta);
    v.axpy(1.0, g)?;
    let mut m = g.clone();
    m.axpy(cfg.beta, &v)?;
    let dir = matrix_direction(&m, rule, &cfg.schedule)?;

    if cfg.weight_decay != 0.0 {
        w.scale_in_place(1.0 - lr * cfg.weight_decay);
    }
    let scale = cfg.direction_scale(w.rows(), w.cols());
    w.axpy(-lr * scale, &dir)?;
    state.v = v;
    state.step += 1;
    Ok(m)
}

/// Functional Muon step at the configured learning rate.
pub fn muon_step(
    w: &Matrix,
    g: &Matrix,
    state: &MuonState,
    cfg: &MuonConfig,
) -> Result<(Matrix, MuonState)> {
    let mut w = w.clone();
    let mut state = state.clone();
    muon_update(&mut w, g, &mut state, cfg, cfg.lr, MatrixRule::NewtonSchulz)?;
    Ok((w, state))
}

/// Muon step with the orthogonalization replaced by a whitening
/// (`Cholesky` or `ZcaCor`).
pub fn variant_step(
    w: &Matrix,
    g: &Matrix,
    state: &MuonState,
    cfg: &MuonConfig,
    kind: WhiteningKind,
) -> Result<(Matrix, MuonState)> {
    let rule = match kind {
        WhiteningKind::Cholesky => MatrixRule::Cholesky,
        WhiteningKind::ZcaCor => MatrixRule::ZcaCor,
        other => {
            return Err(Error::Config(format!(
                "{other:?} has no optimizer variant (expected Cholesky or ZcaCor)"
            )))
        }
    };
    let mut w = w.clone();
    let mut state = state.clone();
    muon_update(&mut w, g, &mut state, cfg, cfg.lr, rule)?;
    Ok((w, state))
}
