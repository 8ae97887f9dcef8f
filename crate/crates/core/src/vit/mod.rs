//! A small vision transformer with hand-written reverse-mode gradients.
//!
//! Architecture: patchify → linear patch embedding → prepend class token →
//! add positional embedding → `depth` pre-norm blocks (multi-head attention
//! with a fused QKV projection, then a GELU MLP) → final layer norm on the
//! class token → linear head. Everything runs in `f64`.

mod forward;
mod gradcheck;
mod metrics;
mod train;

pub use forward::{forward, loss_and_backward, soft_cross_entropy, ForwardCache};
pub use gradcheck::{gradcheck, micro_config, GradCheckEntry, GRADCHECK_STEP};
pub use metrics::{classification_metrics, evaluate, Metrics};
pub use train::{
    train, MemorySink, MetricRow, RunStatus, SnapshotSink, TapSchedule, TrainConfig, TrainReport,
};

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
#[allow(unused_imports)]
use num_traits::Float as _;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::param::{ParamBlock, ParamFamily};

/// Layer-norm epsilon.
pub const LN_EPS: f64 = 1e-6;

/// Standard deviation of the truncated-normal weight initialization
/// (truncated at two standard deviations).
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VitConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub channels: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
    pub num_classes: usize,
}

impl Default for VitConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            patch_size: 4,
            channels: 3,
            embed_dim: 64,
            depth: 6,
            heads: 4,
            mlp_ratio: 4.0,
            num_classes: 10,
        }
    }
}

impl VitConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("image_size", self.image_size),
            ("patch_size", self.patch_size),
            ("channels", self.channels),
            ("embed_dim", self.embed_dim),
            ("heads", self.heads),
            ("num_classes", self.num_classes),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("vit {name} must be positive")));
        }
        if self.image_size % self.patch_size != 0 {
            return Err(Error::Config(format!(
                "image_size {} is not divisible by patch_size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.embed_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} is not divisible by heads {}",
                self.embed_dim, self.heads
            )));
        }
        if !(self.mlp_ratio > 0.0) || self.mlp_hidden() == 0 {
            return Err(Error::Config(format!("mlp_ratio {} gives an empty MLP", self.mlp_ratio)));
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    /// Patches plus the class token.
    pub fn tokens(&self) -> usize {
        self.num_patches() + 1
    }

    pub fn patch_dim(&self) -> usize {
        self.channels * self.patch_size * self.patch_size
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn mlp_hidden(&self) -> usize {
        (self.mlp_ratio * self.embed_dim as f64).round() as usize
    }
}

// Block layout: four stem blocks, twelve per layer, four closing blocks.
pub(crate) const PATCH_W: usize = 0;
pub(crate) const PATCH_B: usize = 1;
pub(crate) const CLS: usize = 2;
pub(crate) const POS: usize = 3;
pub(crate) const STEM: usize = 4;
pub(crate) const PER_LAYER: usize = 12;
pub(crate) const LN1_W: usize = 0;
pub(crate) const LN1_B: usize = 1;
pub(crate) const QKV_W: usize = 2;
pub(crate) const QKV_B: usize = 3;
pub(crate) const PROJ_W: usize = 4;
pub(crate) const PROJ_B: usize = 5;
pub(crate) const LN2_W: usize = 6;
pub(crate) const LN2_B: usize = 7;
pub(crate) const FC1_W: usize = 8;
pub(crate) const FC1_B: usize = 9;
pub(crate) const FC2_W: usize = 10;
pub(crate) const FC2_B: usize = 11;

fn trunc_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 2.0 {
            return z * INIT_STD;
        }
    }
}

/// Model parameters plus a version counter that invalidates forward caches
/// whenever parameters are handed out mutably.
#[derive(Clone, Debug, PartialEq)]
pub struct VitModel {
    cfg: VitConfig,
    blocks: Vec<ParamBlock>,
    version: u64,
}

impl VitModel {
    /// Truncated-normal matrices (and class token), zero biases, unit
    /// layer-norm scales.
    pub fn new<R: Rng + ?Sized>(cfg: VitConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.embed_dim;
        let hid = cfg.mlp_hidden();
        let mut blocks = Vec::with_capacity(STEM + PER_LAYER * cfg.depth + 4);
        let mat = |rng: &mut R, name: String, family, depth, rows, cols| {
            ParamBlock::matrix(name, family, depth, Matrix::from_fn(rows, cols, |_, _| trunc_normal(rng)))
        };
        blocks.push(mat(rng, "patch_embed.weight".into(), ParamFamily::PatchEmbed, 0, d, cfg.patch_dim()));
        blocks.push(ParamBlock::vector("patch_embed.bias", ParamFamily::Bias, 0, &alloc::vec![0.0; d]));
        let cls: Vec<f64> = (0..d).map(|_| trunc_normal(rng)).collect();
        blocks.push(ParamBlock::vector("cls_token", ParamFamily::ClsToken, 0, &cls));
        blocks.push(mat(rng, "pos_embed".into(), ParamFamily::PosEmbed, 0, cfg.tokens(), d));
        let ones = alloc::vec![1.0; d];
        let zeros = |n: usize| alloc::vec![0.0; n];
        for l in 0..cfg.depth {
            let p = |s: &str| format!("blocks.{l}.{s}");
            blocks.push(ParamBlock::vector(p("norm1.weight"), ParamFamily::Norm, l, &ones));
            blocks.push(ParamBlock::vector(p("norm1.bias"), ParamFamily::Norm, l, &zeros(d)));
            blocks.push(mat(rng, p("attn.qkv.weight"), ParamFamily::Qkv, l, 3 * d, d));
            blocks.push(ParamBlock::vector(p("attn.qkv.bias"), ParamFamily::Bias, l, &zeros(3 * d)));
            blocks.push(mat(rng, p("attn.proj.weight"), ParamFamily::OutProj, l, d, d));
            blocks.push(ParamBlock::vector(p("attn.proj.bias"), ParamFamily::Bias, l, &zeros(d)));
            blocks.push(ParamBlock::vector(p("norm2.weight"), ParamFamily::Norm, l, &ones));
            blocks.push(ParamBlock::vector(p("norm2.bias"), ParamFamily::Norm, l, &zeros(d)));
            blocks.push(mat(rng, p("mlp.fc1.weight"), ParamFamily::MlpUp, l, hid, d));
            blocks.push(ParamBlock::vector(p("mlp.fc1.bias"), ParamFamily::Bias, l, &zeros(hid)));
            blocks.push(mat(rng, p("mlp.fc2.weight"), ParamFamily::MlpDown, l, d, hid));
            blocks.push(ParamBlock::vector(p("mlp.fc2.bias"), ParamFamily::Bias, l, &zeros(d)));
        }
        blocks.push(ParamBlock::vector("norm.weight", ParamFamily::Norm, 0, &ones));
        blocks.push(ParamBlock::vector("norm.bias", ParamFamily::Norm, 0, &zeros(d)));
        blocks.push(mat(rng, "head.weight".into(), ParamFamily::Head, 0, cfg.num_classes, d));
        blocks.push(ParamBlock::vector("head.bias", ParamFamily::Bias, 0, &zeros(cfg.num_classes)));
        Ok(Self {
            cfg,
            blocks,
            version: 0,
        })
    }

    /// Rebuild from stored blocks (e.g. a checkpoint); names and shapes must
    /// match the layout `cfg` implies.
    pub fn from_blocks(cfg: VitConfig, blocks: Vec<ParamBlock>) -> Result<Self> {
        let template = Self::new(cfg.clone(), &mut crate::rng::stream(0, &[]))?;
        if template.blocks.len() != blocks.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter blocks, got {}",
                template.blocks.len(),
                blocks.len()
            )));
        }
        for (t, b) in template.blocks.iter().zip(&blocks) {
            if t.name != b.name || t.shape() != b.shape() || t.family != b.family {
                return Err(Error::Shape(format!(
                    "block `{}` {:?} does not match expected `{}` {:?}",
                    b.name,
                    b.shape(),
                    t.name,
                    t.shape()
                )));
            }
        }
        Ok(Self {
            cfg,
            blocks,
            version: 0,
        })
    }

    pub fn config(&self) -> &VitConfig {
        &self.cfg
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    /// Mutable access to all blocks; invalidates outstanding forward caches.
    pub fn blocks_mut(&mut self) -> &mut [ParamBlock] {
        self.version += 1;
        &mut self.blocks
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn block(&self, name: &str) -> Option<&ParamBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn num_parameters(&self) -> usize {
        self.blocks.iter().map(ParamBlock::num_elements).sum()
    }

    pub(crate) fn layer(&self, l: usize, k: usize) -> &ParamBlock {
        &self.blocks[STEM + PER_LAYER * l + k]
    }

    pub(crate) fn tail(&self, k: usize) -> &ParamBlock {
        &self.blocks[STEM + PER_LAYER * self.cfg.depth + k]
    }

    pub(crate) fn grads_mut(&mut self) -> &mut [ParamBlock] {
        &mut self.blocks
    }
}

/// Numerically stable softmax of one row, in place.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = 1.0 / sum;
    row.iter_mut().for_each(|v| *v *= inv);
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // √(2/π)
const GELU_K: f64 = 0.044_715;

/// GELU, tanh approximation.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn layout_and_shapes() {
        let cfg = VitConfig::default();
        let m = VitModel::new(cfg.clone(), &mut stream(1, &[])).unwrap();
        assert_eq!(m.blocks().len(), 4 + 12 * 6 + 4);
        let qkv = m.block("blocks.3.attn.qkv.weight").unwrap();
        assert_eq!((qkv.shape(), qkv.family, qkv.depth), ((192, 64), ParamFamily::Qkv, 3));
        assert_eq!(m.block("blocks.0.mlp.fc1.weight").unwrap().shape(), (256, 64));
        assert_eq!(m.block("blocks.0.mlp.fc2.weight").unwrap().shape(), (64, 256));
        assert_eq!(m.block("pos_embed").unwrap().shape(), (65, 64));
        assert_eq!(m.layer(2, QKV_W).name, "blocks.2.attn.qkv.weight");
        assert_eq!(m.tail(2).name, "head.weight");
        for b in m.blocks() {
            if b.family.is_backbone_matrix() {
                assert!(!b.is_vector);
            }
        }
        let total: usize = m.blocks().iter().filter(|b| b.family != ParamFamily::Norm).map(|b| b.value.data().iter().filter(|v| v.abs() > 0.04 + 1e-15).count()).sum();
        assert_eq!(total, 0, "truncated at two standard deviations");
    }

    #[test]
    fn config_validation() {
        let mut c = VitConfig::default();
        c.patch_size = 5;
        assert!(c.validate().is_err());
        let mut c = VitConfig::default();
        c.heads = 5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn gelu_derivative_matches_differences() {
        for x in [-3.0, -1.0, -0.1, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn version_bumps_on_mutable_access() {
        let mut m = VitModel::new(VitConfig::default(), &mut stream(1, &[])).unwrap();
        let v = m.version();
        let _ = m.blocks_mut();
        assert_eq!(m.version(), v + 1);
    }
}
