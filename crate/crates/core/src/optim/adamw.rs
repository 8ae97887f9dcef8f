use alloc::format;

#[cfg(not(feature = "std"))]
#[allow(unused_imports)]
use num_traits::Float as _;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.05,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("adamw lr must be positive, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("adamw {name} must be in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("adamw eps must be positive, got {}", self.eps)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamWState {
    pub m1: Matrix,
    pub m2: Matrix,
    pub step: u64,
}

impl AdamWState {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            m1: Matrix::zeros(rows, cols),
            m2: Matrix::zeros(rows, cols),
            step: 0,
        }
    }
}

/// One in-place AdamW step at learning rate `lr` with bias-corrected moments
/// and decoupled weight decay.
pub fn adamw_update(
    w: &mut Matrix,
    g: &Matrix,
    state: &mut AdamWState,
    cfg: &AdamWConfig,
    lr: f64,
) -> Result<()> {
    if w.shape() != g.shape() || w.shape() != state.m1.shape() || w.shape() != state.m2.shape() {
        return Err(Error::Dimension {
            op: "adamw step",
            lhs: w.shape(),
            rhs: g.shape(),
        });
    }
    if !g.is_finite() {
        return Err(Error::NonFinite("adamw gradient"));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let decay = 1.0 - lr * cfg.weight_decay;
    let it = w
        .data_mut()
        .iter_mut()
        .zip(g.data())
        .zip(state.m1.data_mut().iter_mut().zip(state.m2.data_mut()));
    for ((wi, &gi), (m1, m2)) in it {
        *m1 = cfg.beta1 * *m1 + (1.0 - cfg.beta1) * gi;
        *m2 = cfg.beta2 * *m2 + (1.0 - cfg.beta2) * gi * gi;
        let m_hat = *m1 / c1;
        let v_hat = *m2 / c2;
        *wi = *wi * decay - lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Functional AdamW step at the configured learning rate.
pub fn adamw_step(
    w: &Matrix,
    g: &Matrix,
    state: &AdamWState,
    cfg: &AdamWConfig,
) -> Result<(Matrix, AdamWState)> {
    let mut w = w.clone();
    let mut state = state.clone();
    adamw_update(&mut w, g, &mut state, cfg, cfg.lr)?;
    Ok((w, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::gaussian;

    fn no_decay() -> AdamWConfig {
        AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn first_step_scalar() {
        let cfg = no_decay();
        let w = Matrix::row_vector(&[0.5]);
        let g = Matrix::row_vector(&[1.0]);
        let (next, s) = adamw_step(&w, &g, &AdamWState::new(1, 1), &cfg).unwrap();
        let expect = 0.5 - cfg.lr * (1.0 / (1.0 + cfg.eps));
        assert!((next[(0, 0)] - expect).abs() < 1e-18);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn zero_gradient_only_decays_moments() {
        let cfg = no_decay();
        let w = gaussian(3, 3, 1);
        let mut state = AdamWState::new(3, 3);
        state.m1 = gaussian(3, 3, 2);
        state.m2 = gaussian(3, 3, 3).map(|v| v * v);
        state.step = 4;
        let zero = Matrix::zeros(3, 3);
        let (_, next) = adamw_step(&w, &zero, &state, &cfg).unwrap();
        assert!(next.m1.sub(&state.m1.scaled(0.9)).unwrap().max_abs() < 1e-15);
        assert!(next.m2.sub(&state.m2.scaled(0.999)).unwrap().max_abs() < 1e-15);

        let (w_next, _) = adamw_step(&w, &zero, &AdamWState::new(3, 3), &cfg).unwrap();
        assert_eq!(w_next, w);
    }

    #[test]
    fn fresh_step_opposes_gradient_sign() {
        let cfg = no_decay();
        for seed in 0..10 {
            let w = gaussian(6, 5, seed);
            let g = gaussian(6, 5, seed + 100);
            let (next, _) = adamw_step(&w, &g, &AdamWState::new(6, 5), &cfg).unwrap();
            for ((a, b), gi) in next.data().iter().zip(w.data()).zip(g.data()) {
                assert_eq!((a - b).signum(), -gi.signum());
            }
        }
    }

    #[test]
    fn coordinate_independence() {
        let cfg = AdamWConfig::default();
        let w = gaussian(1, 12, 1);
        let g = gaussian(1, 12, 2);
        let mut state = AdamWState::new(1, 12);
        state.m1 = gaussian(1, 12, 3);
        state.m2 = gaussian(1, 12, 4).map(f64::abs);
        let perm: Vec<usize> = (0..12).map(|i| (i * 5) % 12).collect();
        let permute = |m: &Matrix| Matrix::from_fn(1, 12, |_, j| m[(0, perm[j])]);
        let (a, _) = adamw_step(&w, &g, &state, &cfg).unwrap();
        let pstate = AdamWState {
            m1: permute(&state.m1),
            m2: permute(&state.m2),
            step: state.step,
        };
        let (b, _) = adamw_step(&permute(&w), &permute(&g), &pstate, &cfg).unwrap();
        assert_eq!(permute(&a), b);
    }

    #[test]
    fn shape_mismatch() {
        let r = adamw_step(
            &Matrix::zeros(2, 2),
            &Matrix::zeros(2, 3),
            &AdamWState::new(2, 2),
            &AdamWConfig::default(),
        );
        assert!(matches!(r, Err(Error::Dimension { .. })));
    }
}
