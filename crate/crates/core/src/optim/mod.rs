//! Optimizer step rules: Muon, AdamW, whitening variants of Muon, and the
//! hybrid dispatcher that routes parameter blocks between them.

mod adamw;
mod hybrid;
mod muon;

pub use adamw::{adamw_step, adamw_update, AdamWConfig, AdamWState};
pub use hybrid::{BlockState, DispatchPolicy, HybridOptimizer, MomentumView, Route};
pub use muon::{matrix_direction, muon_step, muon_update, variant_step, MatrixRule, MuonConfig, MuonState};

use core::fmt;
use core::str::FromStr;

#[cfg(not(feature = "std"))]
#[allow(unused_imports)]
use num_traits::Float as _;

use crate::error::{Error, Result};

/// Default floor of the cosine schedule, as a fraction of the base rate.
pub const DEFAULT_MIN_LR_RATIO: f64 = 0.05;

/// `base_lr · (min_ratio + (1 − min_ratio) · ½(1 + cos(π·step/total)))`.
/// A zero-length schedule stays at `base_lr`.
pub fn cosine_lr(step: u64, total: u64, base_lr: f64, min_ratio: f64) -> f64 {
    if total == 0 {
        return base_lr;
    }
    let t = step.min(total) as f64 / total as f64;
    base_lr * (min_ratio + (1.0 - min_ratio) * 0.5 * (1.0 + (core::f64::consts::PI * t).cos()))
}

/// Top-level optimizer choice of a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum OptimizerKind {
    Muon,
    AdamW,
    Cholesky,
    ZcaCor,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Muon => "muon",
            OptimizerKind::AdamW => "adamw",
            OptimizerKind::Cholesky => "cholesky",
            OptimizerKind::ZcaCor => "zca_cor",
        }
    }

    /// Dispatch policy and matrix rule implied by this choice, given the
    /// policy requested for matrix optimizers.
    pub fn plan(self, matrix_policy: DispatchPolicy) -> (DispatchPolicy, MatrixRule) {
        match self {
            OptimizerKind::AdamW => (DispatchPolicy::AllAdamW, MatrixRule::NewtonSchulz),
            OptimizerKind::Muon => (matrix_policy, MatrixRule::NewtonSchulz),
            OptimizerKind::Cholesky => (matrix_policy, MatrixRule::Cholesky),
            OptimizerKind::ZcaCor => (matrix_policy, MatrixRule::ZcaCor),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "muon" => Ok(OptimizerKind::Muon),
            "adamw" => Ok(OptimizerKind::AdamW),
            "cholesky" => Ok(OptimizerKind::Cholesky),
            "zca_cor" => Ok(OptimizerKind::ZcaCor),
            _ => Err(Error::Config(alloc::format!("unknown optimizer `{s}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_lr(0, 100, 2.0, 0.05), 2.0);
        assert!((cosine_lr(100, 100, 2.0, 0.05) - 0.1).abs() < 1e-15);
        assert!((cosine_lr(50, 100, 1.0, 0.05) - 0.525).abs() < 1e-15);
        assert_eq!(cosine_lr(0, 0, 3.0, 0.05), 3.0);
        let mut prev = f64::INFINITY;
        for s in 0..=40 {
            let lr = cosine_lr(s, 40, 1.0, 0.05);
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn kind_parsing() {
        for k in [
            OptimizerKind::Muon,
            OptimizerKind::AdamW,
            OptimizerKind::Cholesky,
            OptimizerKind::ZcaCor,
        ] {
            assert_eq!(k.as_str().parse::<OptimizerKind>().unwrap(), k);
        }
        assert_eq!(
            OptimizerKind::AdamW.plan(DispatchPolicy::MatrixToMuon).0,
            DispatchPolicy::AllAdamW
        );
    }
}
