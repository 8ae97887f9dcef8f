use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// One odd-polynomial step `X ← aX + b(XXᵀ)X + c(XXᵀ)²X`.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NsCoeffs {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl NsCoeffs {
    pub const fn new(a: f64, b: f64, c: f64) -> Self {
        Self { a, b, c }
    }

    /// The scalar polynomial this step applies to each singular value.
    pub fn apply_scalar(&self, x: f64) -> f64 {
        let x2 = x * x;
        x * (self.a + x2 * (self.b + self.c * x2))
    }
}

/// The widely used constant quintic.
pub const STANDARD_QUINTIC: NsCoeffs = NsCoeffs::new(3.4445, -4.7750, 2.0315);

/// Named, ordered list of Newton-Schulz coefficient triples, one per
/// iteration. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NsCoeffSchedule {
    name: String,
    steps: Vec<NsCoeffs>,
}

impl NsCoeffSchedule {
    pub fn new(name: impl Into<String>, steps: Vec<NsCoeffs>) -> Result<Self> {
        let name = name.into();
        if steps.is_empty() {
            return Err(Error::Config(format!("schedule `{name}` has no iterations")));
        }
        if let Some(i) = steps
            .iter()
            .position(|s| !(s.a.is_finite() && s.b.is_finite() && s.c.is_finite()))
        {
            return Err(Error::Config(format!(
                "schedule `{name}` has a non-finite coefficient at iteration {i}"
            )));
        }
        Ok(Self { name, steps })
    }

    /// The same triple repeated `iterations` times.
    pub fn constant(name: impl Into<String>, coeffs: NsCoeffs, iterations: usize) -> Result<Self> {
        Self::new(name, vec![coeffs; iterations])
    }

    /// Standard quintic, five iterations.
    pub fn standard() -> Self {
        Self::constant("standard", STANDARD_QUINTIC, 5).expect("valid constant")
    }

    /// Classic cubic Newton-Schulz `(1.5, -0.5, 0)`, which converges
    /// monotonically to the polar factor; 40 iterations resolve inputs
    /// whose normalized smallest singular value is above ~1e-4.
    pub fn cubic_precise() -> Self {
        Self::constant("cubic-precise", NsCoeffs::new(1.5, -0.5, 0.0), 40).expect("valid constant")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn steps(&self) -> &[NsCoeffs] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// The first `k` iterations (at least one).
    pub fn truncated(&self, k: usize) -> Result<Self> {
        Self::new(
            format!("{}[..{k}]", self.name),
            self.steps.iter().take(k).copied().collect(),
        )
    }

    /// Composite scalar map applied to a normalized singular value.
    pub fn apply_scalar(&self, x: f64) -> f64 {
        self.steps.iter().fold(x, |acc, s| s.apply_scalar(acc))
    }

    pub fn with_name(mut self, name: &str) -> Self {
        self.name = name.to_string();
        self
    }
}
