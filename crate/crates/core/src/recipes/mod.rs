//! Data-side training recipes: Mixup, CutMix, label smoothing, random
//! erasing, a small RandAugment, and the named recipe variants that switch
//! them on and off.

mod erase;
mod mix;
mod randaug;

pub use erase::{random_erase, random_erase_with, EraseRect, ERASE_ASPECT, ERASE_AREA, ERASE_NOISE};
pub use mix::{cutmix, cutmix_with, mixup, mixup_with, rand_bbox, BBox};
pub use randaug::{apply_op, rand_augment_lite, AugOp, MAX_MAGNITUDE};

use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Pixel values are kept in `[-PIXEL_BOUND, PIXEL_BOUND]` after
/// standardization and every photometric operation.
pub const PIXEL_BOUND: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum MixKind {
    Mixup,
    CutMix,
}

/// What the last mixing operation did to a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct MixRecord {
    pub kind: MixKind,
    /// The drawn mixing coefficient.
    pub lambda: f64,
    /// Weight each example keeps on its own label (equals `lambda` for Mixup,
    /// the realized un-pasted area fraction for CutMix).
    pub label_weight: f64,
    pub partners: Vec<usize>,
    pub bbox: Option<BBox>,
}

/// A batch of `n` images in NCHW layout with soft labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBatch {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub pixels: Vec<f64>,
    /// `n x num_classes`, each row on the probability simplex.
    pub labels: Matrix,
    pub mix: Option<MixRecord>,
}

impl ImageBatch {
    pub fn new(n: usize, c: usize, h: usize, w: usize, pixels: Vec<f64>, labels: Matrix) -> Result<Self> {
        if n == 0 {
            return Err(Error::BatchSize(0));
        }
        if pixels.len() != n * c * h * w {
            return Err(Error::Shape(format!(
                "{n}x{c}x{h}x{w} batch needs {} pixels, got {}",
                n * c * h * w,
                pixels.len()
            )));
        }
        if labels.rows() != n {
            return Err(Error::Shape(format!("{} label rows for {n} images", labels.rows())));
        }
        Ok(Self {
            n,
            c,
            h,
            w,
            pixels,
            labels,
            mix: None,
        })
    }

    /// One-hot label matrix for class indices.
    pub fn one_hot(classes: &[usize], num_classes: usize) -> Result<Matrix> {
        let mut m = Matrix::zeros(classes.len().max(1), num_classes);
        for (i, &c) in classes.iter().enumerate() {
            if c >= num_classes {
                return Err(Error::Index {
                    index: c,
                    len: num_classes,
                });
            }
            m[(i, c)] = 1.0;
        }
        Ok(m)
    }

    pub fn num_classes(&self) -> usize {
        self.labels.cols()
    }

    pub fn image_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let l = self.image_len();
        &self.pixels[i * l..(i + 1) * l]
    }

    pub fn image_mut(&mut self, i: usize) -> &mut [f64] {
        let l = self.image_len();
        &mut self.pixels[i * l..(i + 1) * l]
    }

    /// Largest deviation of a label row from the simplex (negative entries or
    /// row sum away from one).
    pub fn simplex_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            let row = self.labels.row(i);
            let sum: f64 = row.iter().sum();
            worst = worst.max((sum - 1.0).abs());
            for v in row {
                worst = worst.max(-v);
            }
        }
        worst
    }

    pub fn pixels_within(&self, bound: f64) -> bool {
        self.pixels.iter().all(|p| p.is_finite() && p.abs() <= bound)
    }
}

/// The four recipe variants: both component groups, no random augmentation,
/// no mixing-side smoothing, or neither.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Variant {
    Full,
    NoRand,
    NoMix,
    NoMixNoRand,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoRand, Variant::NoMix, Variant::NoMixNoRand];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoRand => "no_rand",
            Variant::NoMix => "no_mix",
            Variant::NoMixNoRand => "no_mix_no_rand",
        }
    }

    pub fn has_mix(self) -> bool {
        matches!(self, Variant::Full | Variant::NoRand)
    }

    pub fn has_rand(self) -> bool {
        matches!(self, Variant::Full | Variant::NoMix)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown recipe variant `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RecipeConfig {
    pub variant: Variant,
    pub mixup_alpha: f64,
    pub cutmix_alpha: f64,
    pub mix_prob: f64,
    pub switch_prob: f64,
    pub label_smoothing: f64,
    pub randaug_ops: usize,
    pub randaug_magnitude: u32,
    pub erase_prob: f64,
}

impl RecipeConfig {
    /// The variant with default hyperparameters: Mixup α 0.8, CutMix α 1.0,
    /// mixing probability 1.0, switch probability 0.5, smoothing 0.1,
    /// RandAugment 2 ops at magnitude 9, erasing probability 0.25, with the
    /// disabled group zeroed out.
    pub fn preset(variant: Variant) -> Self {
        let mut c = Self {
            variant,
            mixup_alpha: 0.8,
            cutmix_alpha: 1.0,
            mix_prob: 1.0,
            switch_prob: 0.5,
            label_smoothing: 0.1,
            randaug_ops: 2,
            randaug_magnitude: 9,
            erase_prob: 0.25,
        };
        if !variant.has_mix() {
            c.mixup_alpha = 0.0;
            c.cutmix_alpha = 0.0;
            c.label_smoothing = 0.0;
        }
        if !variant.has_rand() {
            c.randaug_ops = 0;
            c.erase_prob = 0.0;
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| -> Result<()> {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be in [0, 1], got {v}")))
            }
        };
        unit("mix_prob", self.mix_prob)?;
        unit("switch_prob", self.switch_prob)?;
        unit("erase_prob", self.erase_prob)?;
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::Config(format!(
                "label_smoothing must be in [0, 1), got {}",
                self.label_smoothing
            )));
        }
        for (name, a) in [("mixup_alpha", self.mixup_alpha), ("cutmix_alpha", self.cutmix_alpha)] {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative, got {a}")));
            }
        }
        if self.randaug_magnitude > MAX_MAGNITUDE {
            return Err(Error::Config(format!(
                "randaug_magnitude must be at most {MAX_MAGNITUDE}, got {}",
                self.randaug_magnitude
            )));
        }
        if !self.variant.has_mix()
            && (self.mixup_alpha > 0.0 || self.cutmix_alpha > 0.0 || self.label_smoothing > 0.0)
        {
            return Err(Error::Config(format!(
                "variant {} disables Mixup, CutMix and label smoothing together",
                self.variant
            )));
        }
        if !self.variant.has_rand() && (self.randaug_ops > 0 || self.erase_prob > 0.0) {
            return Err(Error::Config(format!(
                "variant {} disables RandAugment and random erasing",
                self.variant
            )));
        }
        Ok(())
    }

    pub fn mixing_enabled(&self) -> bool {
        self.mix_prob > 0.0 && (self.mixup_alpha > 0.0 || self.cutmix_alpha > 0.0)
    }
}

/// `row ← (1 − eps)·row + eps/num_classes`.
pub fn label_smooth(labels: &Matrix, eps: f64, num_classes: usize) -> Result<Matrix> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::Config(format!("label smoothing {eps} outside [0, 1)")));
    }
    if labels.cols() != num_classes {
        return Err(Error::Shape(format!(
            "{} label columns for {num_classes} classes",
            labels.cols()
        )));
    }
    if eps == 0.0 {
        return Ok(labels.clone());
    }
    let floor = eps / num_classes as f64;
    Ok(labels.map(|v| (1.0 - eps) * v + floor))
}

/// Run the recipe: RandAugment → random erasing → (with probability
/// `mix_prob`) Mixup or CutMix → label smoothing. Components whose
/// hyperparameters are zero never fire and draw nothing from `rng`.
pub fn apply_recipe<R: Rng + ?Sized>(batch: &ImageBatch, cfg: &RecipeConfig, rng: &mut R) -> Result<ImageBatch> {
    cfg.validate()?;
    let mut out = if cfg.randaug_ops > 0 {
        rand_augment_lite(batch, cfg.randaug_ops, cfg.randaug_magnitude, rng)?
    } else {
        batch.clone()
    };
    if cfg.erase_prob > 0.0 {
        out = random_erase(&out, cfg.erase_prob, rng)?;
    }
    if cfg.mixing_enabled() && rng.random::<f64>() < cfg.mix_prob {
        let use_cutmix = match (cfg.mixup_alpha > 0.0, cfg.cutmix_alpha > 0.0) {
            (true, true) => rng.random::<f64>() < cfg.switch_prob,
            (false, true) => true,
            _ => false,
        };
        out = if use_cutmix {
            cutmix(&out, cfg.cutmix_alpha, rng)?
        } else {
            mixup(&out, cfg.mixup_alpha, rng)?
        };
    }
    if cfg.label_smoothing > 0.0 {
        out.labels = label_smooth(&out.labels, cfg.label_smoothing, out.num_classes())?;
    }
    Ok(out)
}

/// Minibatch gradient `Σᵢ δᵢxᵢᵀ` of softmax cross-entropy for a linear layer
/// `W` (`C x D`) on flattened inputs `x` (`n x D`) with soft targets `y`
/// (`n x C`), where `δᵢ = softmax(Wxᵢ) − yᵢ`.
pub fn linear_softmax_gradient(w: &Matrix, x: &Matrix, y: &Matrix) -> Result<Matrix> {
    let logits = x.matmul_nt(w)?;
    let mut delta = logits;
    for i in 0..delta.rows() {
        let row = delta.row_mut(i);
        crate::vit::softmax_in_place(row);
    }
    let delta = delta.sub(y)?;
    delta.matmul_tn(x)
}

/// Flatten a batch into an `n x (c·h·w)` matrix.
pub fn flatten(batch: &ImageBatch) -> Matrix {
    Matrix::from_vec(batch.n, batch.image_len(), batch.pixels.clone()).expect("consistent batch")
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::rng::stream;
    use alloc::vec;
    use rand_distr::{Distribution, StandardNormal};

    /// Random batch with standardized-looking pixels and one-hot labels.
    pub(crate) fn random_batch(n: usize, c: usize, hw: usize, classes: usize, seed: u64) -> ImageBatch {
        let mut rng = stream(seed, &[0xBA7C]);
        let pixels = (0..n * c * hw * hw)
            .map(|_| {
                let v: f64 = StandardNormal.sample(&mut rng);
                v.clamp(-PIXEL_BOUND, PIXEL_BOUND)
            })
            .collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        ImageBatch::new(n, c, hw, hw, pixels, ImageBatch::one_hot(&labels, classes).unwrap()).unwrap()
    }

    #[test]
    fn label_smoothing_examples() {
        let y = ImageBatch::one_hot(&[3, 0], 100).unwrap();
        assert_eq!(label_smooth(&y, 0.0, 100).unwrap(), y);
        let s = label_smooth(&y, 0.1, 100).unwrap();
        assert_eq!(s[(0, 3)], 0.901);
        assert_eq!(s[(0, 0)], 0.001);
        assert_eq!(s[(1, 0)], 0.901);
        for i in 0..2 {
            assert!((s.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!(label_smooth(&y, 1.0, 100).is_err());
        assert!(label_smooth(&y, -0.1, 100).is_err());
    }

    #[test]
    fn presets_follow_coupling() {
        let full = RecipeConfig::preset(Variant::Full);
        assert_eq!(
            (full.mixup_alpha, full.cutmix_alpha, full.label_smoothing),
            (0.8, 1.0, 0.1)
        );
        assert_eq!((full.randaug_ops, full.randaug_magnitude, full.erase_prob), (2, 9, 0.25));
        assert_eq!((full.mix_prob, full.switch_prob), (1.0, 0.5));
        let nomix = RecipeConfig::preset(Variant::NoMix);
        assert_eq!(nomix.label_smoothing, 0.0);
        assert!(!nomix.mixing_enabled());
        assert_eq!(nomix.randaug_ops, 2);
        let norand = RecipeConfig::preset(Variant::NoRand);
        assert_eq!((norand.randaug_ops, norand.erase_prob), (0, 0.0));
        for v in Variant::ALL {
            RecipeConfig::preset(v).validate().unwrap();
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        let mut bad = RecipeConfig::preset(Variant::NoMix);
        bad.label_smoothing = 0.1;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn no_mix_no_rand_is_identity() {
        let b = random_batch(4, 3, 8, 5, 1);
        let mut rng = stream(2, &[]);
        let out = apply_recipe(&b, &RecipeConfig::preset(Variant::NoMixNoRand), &mut rng).unwrap();
        assert_eq!(out, b);
    }

    #[test]
    fn no_mix_keeps_one_hot_labels() {
        let b = random_batch(6, 3, 8, 5, 3);
        let mut rng = stream(4, &[]);
        let out = apply_recipe(&b, &RecipeConfig::preset(Variant::NoMix), &mut rng).unwrap();
        assert_eq!(out.labels, b.labels);
        assert!(out.mix.is_none());
    }

    #[test]
    fn full_recipe_mixes_and_smooths() {
        let b = random_batch(8, 3, 8, 10, 5);
        let mut rng = stream(6, &[]);
        let out = apply_recipe(&b, &RecipeConfig::preset(Variant::Full), &mut rng).unwrap();
        assert!(out.mix.is_some());
        assert!(out.labels.data().iter().all(|v| *v >= 0.01 - 1e-12));
        assert!(out.simplex_defect() < 1e-9);
    }

    #[test]
    fn recipe_is_deterministic_and_preserves_invariants() {
        let cfg = RecipeConfig::preset(Variant::Full);
        for seed in 0..50 {
            let b = random_batch(6, 3, 8, 7, seed);
            let a = apply_recipe(&b, &cfg, &mut stream(seed, &[1])).unwrap();
            let c = apply_recipe(&b, &cfg, &mut stream(seed, &[1])).unwrap();
            assert_eq!(a, c);
            assert!(a.simplex_defect() < 1e-6);
            assert!(a.pixels_within(PIXEL_BOUND));
        }
    }

    #[test]
    fn batch_validation() {
        assert!(ImageBatch::new(0, 1, 2, 2, vec![], Matrix::zeros(1, 2)).is_err());
        assert!(ImageBatch::new(1, 1, 2, 2, vec![0.0; 3], Matrix::zeros(1, 2)).is_err());
        assert!(ImageBatch::one_hot(&[5], 3).is_err());
    }

    #[test]
    fn linear_gradient_is_sum_of_outer_products() {
        let b = random_batch(3, 1, 4, 4, 9);
        let x = flatten(&b);
        let w = crate::testutil::gaussian(4, 16, 1).scaled(0.1);
        let g = linear_softmax_gradient(&w, &x, &b.labels).unwrap();
        let mut expect = Matrix::zeros(4, 16);
        for i in 0..3 {
            let mut p: Vec<f64> = (0..4)
                .map(|c| crate::linalg::matmul(&Matrix::row_vector(w.row(c)), &Matrix::from_vec(16, 1, x.row(i).to_vec()).unwrap()).unwrap()[(0, 0)])
                .collect();
            crate::vit::softmax_in_place(&mut p);
            for c in 0..4 {
                let d = p[c] - b.labels[(i, c)];
                for j in 0..16 {
                    expect[(c, j)] += d * x[(i, j)];
                }
            }
        }
        assert!(g.sub(&expect).unwrap().max_abs() < 1e-12);
    }
}
