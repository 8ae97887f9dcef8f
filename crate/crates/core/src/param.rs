//! Named trainable tensors and their family taxonomy.

use alloc::string::String;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::spectral::BlockFamily;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ParamFamily {
    Qkv,
    OutProj,
    MlpUp,
    MlpDown,
    PatchEmbed,
    Head,
    Norm,
    Bias,
    PosEmbed,
    ClsToken,
}

impl ParamFamily {
    pub const ALL: [ParamFamily; 10] = [
        ParamFamily::Qkv,
        ParamFamily::OutProj,
        ParamFamily::MlpUp,
        ParamFamily::MlpDown,
        ParamFamily::PatchEmbed,
        ParamFamily::Head,
        ParamFamily::Norm,
        ParamFamily::Bias,
        ParamFamily::PosEmbed,
        ParamFamily::ClsToken,
    ];

    /// The four per-block transformer projections.
    pub fn is_backbone_matrix(self) -> bool {
        matches!(
            self,
            ParamFamily::Qkv | ParamFamily::OutProj | ParamFamily::MlpUp | ParamFamily::MlpDown
        )
    }

    pub fn spectral_family(self) -> BlockFamily {
        match self {
            ParamFamily::Qkv => BlockFamily::Qkv,
            ParamFamily::OutProj => BlockFamily::OutProj,
            ParamFamily::MlpUp => BlockFamily::MlpUp,
            ParamFamily::MlpDown => BlockFamily::MlpDown,
            _ => BlockFamily::Other,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ParamFamily::Qkv => "qkv",
            ParamFamily::OutProj => "out_proj",
            ParamFamily::MlpUp => "mlp_up",
            ParamFamily::MlpDown => "mlp_down",
            ParamFamily::PatchEmbed => "patch_embed",
            ParamFamily::Head => "head",
            ParamFamily::Norm => "norm",
            ParamFamily::Bias => "bias",
            ParamFamily::PosEmbed => "pos_embed",
            ParamFamily::ClsToken => "cls_token",
        }
    }
}

impl fmt::Display for ParamFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ParamFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ParamFamily::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::Config(alloc::format!("unknown parameter family `{s}`")))
    }
}

/// A trainable tensor with its gradient slot.
///
/// Vectors (biases, norm scales) are stored as `1 x n` matrices with
/// `is_vector` set, so optimizers can tell them apart from genuine 2-D weights
/// that happen to have one row.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ParamBlock {
    pub name: String,
    pub family: ParamFamily,
    pub depth: usize,
    pub is_vector: bool,
    pub value: Matrix,
    pub grad: Matrix,
}

impl ParamBlock {
    pub fn matrix(name: impl Into<String>, family: ParamFamily, depth: usize, value: Matrix) -> Self {
        let grad = Matrix::zeros(value.rows(), value.cols());
        Self {
            name: name.into(),
            family,
            depth,
            is_vector: false,
            value,
            grad,
        }
    }

    pub fn vector(name: impl Into<String>, family: ParamFamily, depth: usize, values: &[f64]) -> Self {
        let value = Matrix::row_vector(values);
        let grad = Matrix::zeros(1, values.len());
        Self {
            name: name.into(),
            family,
            depth,
            is_vector: true,
            value,
            grad,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn num_elements(&self) -> usize {
        self.value.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn taxonomy() {
        assert_eq!(ParamFamily::MlpDown.spectral_family(), BlockFamily::MlpDown);
        assert_eq!(ParamFamily::Head.spectral_family(), BlockFamily::Other);
        assert!(ParamFamily::Qkv.is_backbone_matrix());
        assert!(!ParamFamily::PatchEmbed.is_backbone_matrix());
        for f in ParamFamily::ALL {
            assert_eq!(f.as_str().parse::<ParamFamily>().unwrap(), f);
        }
    }

    #[test]
    fn vector_blocks() {
        let b = ParamBlock::vector("norm.weight", ParamFamily::Norm, 0, &[1.0, 1.0, 1.0]);
        assert!(b.is_vector);
        assert_eq!(b.shape(), (1, 3));
        assert!(b.grad.is_zero());
    }
}
