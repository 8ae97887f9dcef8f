//! Deterministic synthetic image datasets (balanced and long-tailed).

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
#[allow(unused_imports)]
use num_traits::Float as _;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::recipes::{ImageBatch, PIXEL_BOUND};
use crate::rng::stream;

const STREAM_TEMPLATE: u64 = 0x7E3A;
const STREAM_SAMPLE: u64 = 0x5A3F;
const STREAM_SPLIT: u64 = 0x5B11;

/// Fraction of each class held out for validation is `1 / VAL_DIVISOR`,
/// rounded down, with at least one sample.
pub const VAL_DIVISOR: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "profile", rename_all = "snake_case"))]
pub enum ClassCounts {
    Constant { per_class: usize },
    /// Class `c` (1-based) gets `⌈total · c^{−s} / Σ_j j^{−s}⌉` samples.
    Zipf { s: f64, total: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Generator {
    /// Class template made of a few Gaussian bumps with per-channel colour,
    /// per-sample amplitude jitter and white noise.
    GaussianBlobs,
    /// Class-specific set of spatial frequencies with random per-sample
    /// phases, plus white noise.
    TexturePatches,
}

impl Generator {
    pub fn as_str(self) -> &'static str {
        match self {
            Generator::GaussianBlobs => "gaussian_blobs",
            Generator::TexturePatches => "texture_patches",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DatasetSpec {
    pub name: String,
    pub num_classes: usize,
    pub counts: ClassCounts,
    pub image_size: usize,
    pub channels: usize,
    pub generator: Generator,
    /// Standard deviation of the additive white noise.
    pub noise: f64,
    pub seed: u64,
}

impl DatasetSpec {
    /// 10 balanced classes × 500.
    pub fn in_mini() -> Self {
        Self {
            name: "in-mini".into(),
            num_classes: 10,
            counts: ClassCounts::Constant { per_class: 500 },
            image_size: 32,
            channels: 3,
            generator: Generator::GaussianBlobs,
            noise: 1.0,
            seed: 0,
        }
    }

    /// 50 classes, Zipf exponent 1.2, 5000 nominal samples.
    pub fn lt_mini() -> Self {
        Self {
            name: "lt-mini".into(),
            num_classes: 50,
            counts: ClassCounts::Zipf { s: 1.2, total: 5000 },
            ..Self::in_mini()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "in-mini" => Some(Self::in_mini()),
            "lt-mini" => Some(Self::lt_mini()),
            _ => None,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        match self.counts {
            ClassCounts::Constant { per_class } => vec![per_class; self.num_classes],
            ClassCounts::Zipf { s, total } => {
                let z: f64 = (1..=self.num_classes).map(|c| (c as f64).powf(-s)).sum();
                (1..=self.num_classes)
                    .map(|c| (total as f64 * (c as f64).powf(-s) / z).ceil() as usize)
                    .collect()
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.image_size == 0 || self.channels == 0 {
            return Err(Error::Config("dataset dimensions must be positive".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("noise {} must be finite and non-negative", self.noise)));
        }
        if let ClassCounts::Zipf { s, .. } = self.counts {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("zipf exponent {s} must be finite and non-negative")));
            }
        }
        let counts = self.class_counts();
        if let Some((c, n)) = counts.iter().enumerate().find(|(_, &n)| n < 3) {
            return Err(Error::Config(format!(
                "class {c} has {n} samples; at least 3 are needed for 2 train + 1 validation"
            )));
        }
        Ok(())
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.image_size * self.image_size
    }
}

/// Per-split lists of `(record offset, class)`.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SplitIndex {
    pub train: Vec<(usize, usize)>,
    pub val: Vec<(usize, usize)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

/// Per-channel mean and standard deviation over the training split.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// An in-memory dataset. Records are CHW images stored as `f32`, class-major
/// in generation order.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub images: Vec<f32>,
    pub labels: Vec<usize>,
    pub split: SplitIndex,
    pub stats: ChannelStats,
}

fn blob_template(spec: &DatasetSpec, class: usize) -> Vec<f64> {
    let mut rng = stream(spec.seed, &[STREAM_TEMPLATE, class as u64]);
    let s = spec.image_size as f64;
    let mut t = vec![0.0; spec.image_len()];
    for _ in 0..3 {
        let cy = rng.random_range(0.0..s);
        let cx = rng.random_range(0.0..s);
        let width = rng.random_range(0.1..0.25) * s;
        let colour: Vec<f64> = (0..spec.channels).map(|_| StandardNormal.sample(&mut rng)).collect();
        for (ch, a) in colour.iter().enumerate() {
            for y in 0..spec.image_size {
                for x in 0..spec.image_size {
                    let r2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                    t[(ch * spec.image_size + y) * spec.image_size + x] += 2.0 * a * (-r2 / (2.0 * width * width)).exp();
                }
            }
        }
    }
    t
}

/// Three (fy, fx, per-channel weight) components per class.
fn texture_signature(spec: &DatasetSpec, class: usize) -> Vec<(f64, f64, Vec<f64>)> {
    let mut rng = stream(spec.seed, &[STREAM_TEMPLATE, class as u64]);
    let max_f = (spec.image_size / 2).max(1);
    (0..3)
        .map(|_| {
            let fy = rng.random_range(0..=max_f) as f64;
            let fx = rng.random_range(1..=max_f) as f64;
            let w = (0..spec.channels).map(|_| StandardNormal.sample(&mut rng)).collect();
            (fy, fx, w)
        })
        .collect()
}

fn split_counts(n: usize) -> (usize, usize) {
    let val = (n / VAL_DIVISOR).max(1);
    (n - val, val)
}

/// Generate a dataset. A pure function of `spec`.
pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let counts = spec.class_counts();
    let total: usize = counts.iter().sum();
    let len = spec.image_len();
    let hw = spec.image_size;
    let mut images = Vec::with_capacity(total * len);
    let mut labels = Vec::with_capacity(total);
    for (class, &n) in counts.iter().enumerate() {
        let blobs = (spec.generator == Generator::GaussianBlobs).then(|| blob_template(spec, class));
        let texture = (spec.generator == Generator::TexturePatches).then(|| texture_signature(spec, class));
        for i in 0..n {
            let mut rng = stream(spec.seed, &[STREAM_SAMPLE, class as u64, i as u64]);
            let mut img = vec![0.0; len];
            if let Some(t) = &blobs {
                let z: f64 = StandardNormal.sample(&mut rng);
                let amp = 1.0 + 0.2 * z;
                img.iter_mut().zip(t).for_each(|(v, tv)| *v = amp * tv);
            }
            if let Some(sig) = &texture {
                let tau = core::f64::consts::TAU;
                for (fy, fx, w) in sig {
                    let phase = rng.random_range(0.0..tau);
                    for (ch, wc) in w.iter().enumerate() {
                        for y in 0..hw {
                            for x in 0..hw {
                                let arg = tau * (fy * y as f64 + fx * x as f64) / hw as f64 + phase;
                                img[(ch * hw + y) * hw + x] += wc * arg.cos();
                            }
                        }
                    }
                }
            }
            for v in img.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += spec.noise * z;
            }
            images.extend(img.iter().map(|&v| v as f32));
            labels.push(class);
        }
    }

    let mut split = SplitIndex::default();
    let mut offset = 0;
    for (class, &n) in counts.iter().enumerate() {
        let mut members: Vec<usize> = (offset..offset + n).collect();
        members.shuffle(&mut stream(spec.seed, &[STREAM_SPLIT, class as u64]));
        let (_, val) = split_counts(n);
        let (v, t) = members.split_at(val);
        split.val.extend(v.iter().map(|&o| (o, class)));
        split.train.extend(t.iter().map(|&o| (o, class)));
        offset += n;
    }
    split.train.sort_unstable();
    split.val.sort_unstable();

    let stats = channel_stats(spec, &images, &split.train);
    Ok(Dataset {
        spec: spec.clone(),
        images,
        labels,
        split,
        stats,
    })
}

fn channel_stats(spec: &DatasetSpec, images: &[f32], train: &[(usize, usize)]) -> ChannelStats {
    let len = spec.image_len();
    let plane = spec.image_size * spec.image_size;
    let mut mean = vec![0.0; spec.channels];
    let mut sq = vec![0.0; spec.channels];
    for &(o, _) in train {
        let img = &images[o * len..(o + 1) * len];
        for ch in 0..spec.channels {
            for &v in &img[ch * plane..(ch + 1) * plane] {
                mean[ch] += v as f64;
                sq[ch] += (v as f64) * (v as f64);
            }
        }
    }
    let count = (train.len() * plane) as f64;
    let std = (0..spec.channels)
        .map(|ch| {
            let m = mean[ch] / count;
            (sq[ch] / count - m * m).max(0.0).sqrt().max(1e-12)
        })
        .collect();
    mean.iter_mut().for_each(|m| *m /= count);
    ChannelStats { mean, std }
}

impl Dataset {
    /// Reassemble a dataset from stored parts, checking consistency.
    pub fn from_parts(
        spec: DatasetSpec,
        images: Vec<f32>,
        labels: Vec<usize>,
        split: SplitIndex,
        stats: ChannelStats,
    ) -> Result<Self> {
        let len = spec.image_len();
        if images.len() != labels.len() * len {
            return Err(Error::Shape(format!(
                "{} pixel values for {} records of {len}",
                images.len(),
                labels.len()
            )));
        }
        if stats.mean.len() != spec.channels || stats.std.len() != spec.channels {
            return Err(Error::Shape("channel statistics do not match channel count".into()));
        }
        for &(o, c) in split.train.iter().chain(&split.val) {
            if o >= labels.len() {
                return Err(Error::Index {
                    index: o,
                    len: labels.len(),
                });
            }
            if labels[o] != c || c >= spec.num_classes {
                return Err(Error::Config(format!("split entry ({o}, {c}) disagrees with labels")));
            }
        }
        Ok(Self {
            spec,
            images,
            labels,
            split,
            stats,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn split(&self, which: Split) -> &[(usize, usize)] {
        match which {
            Split::Train => &self.split.train,
            Split::Val => &self.split.val,
        }
    }

    pub fn record(&self, offset: usize) -> &[f32] {
        let len = self.spec.image_len();
        &self.images[offset * len..(offset + 1) * len]
    }

    /// Class targets of a whole split, in split order.
    pub fn targets(&self, which: Split) -> Vec<usize> {
        self.split(which).iter().map(|&(_, c)| c).collect()
    }

    /// Largest over smallest class count.
    pub fn head_tail_ratio(&self) -> f64 {
        let counts = self.spec.class_counts();
        let max = counts.iter().copied().max().unwrap_or(0);
        let min = counts.iter().copied().min().unwrap_or(0);
        max as f64 / min.max(1) as f64
    }
}

/// Load split positions `indices` as a batch with one-hot labels. With
/// `standardize`, pixels are shifted and scaled by the recorded training
/// statistics and clamped to `±PIXEL_BOUND`.
pub fn load_batch(data: &Dataset, which: Split, indices: &[usize], standardize: bool) -> Result<ImageBatch> {
    if indices.is_empty() {
        return Err(Error::BatchSize(0));
    }
    let entries = data.split(which);
    let spec = &data.spec;
    let plane = spec.image_size * spec.image_size;
    let mut pixels = Vec::with_capacity(indices.len() * spec.image_len());
    let mut classes = Vec::with_capacity(indices.len());
    for &i in indices {
        let &(o, c) = entries.get(i).ok_or(Error::Index {
            index: i,
            len: entries.len(),
        })?;
        classes.push(c);
        for (k, &v) in data.record(o).iter().enumerate() {
            let v = v as f64;
            pixels.push(if standardize {
                let ch = k / plane;
                ((v - data.stats.mean[ch]) / data.stats.std[ch]).clamp(-PIXEL_BOUND, PIXEL_BOUND)
            } else {
                v
            });
        }
    }
    let labels = ImageBatch::one_hot(&classes, spec.num_classes)?;
    ImageBatch::new(indices.len(), spec.channels, spec.image_size, spec.image_size, pixels, labels)
}

/// Per-class training counts.
pub fn class_histogram(data: &Dataset) -> Vec<usize> {
    let mut h = vec![0; data.spec.num_classes];
    for &(_, c) in &data.split.train {
        h[c] += 1;
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::recipes::{flatten, linear_softmax_gradient};

    fn small(counts: ClassCounts, classes: usize, generator: Generator) -> DatasetSpec {
        DatasetSpec {
            name: "t".into(),
            num_classes: classes,
            counts,
            image_size: 8,
            channels: 3,
            generator,
            noise: 1.0,
            seed: 3,
        }
    }

    #[test]
    fn two_by_four_gives_three_one_split() {
        let d = generate(&small(ClassCounts::Constant { per_class: 4 }, 2, Generator::GaussianBlobs)).unwrap();
        assert_eq!(d.len(), 8);
        assert_eq!(class_histogram(&d), vec![3, 3]);
        let val = d.targets(Split::Val);
        assert_eq!(val.iter().filter(|&&c| c == 0).count(), 1);
        assert_eq!(val.iter().filter(|&&c| c == 1).count(), 1);
        let mut all: Vec<usize> = d.split.train.iter().chain(&d.split.val).map(|e| e.0).collect();
        all.sort_unstable();
        assert_eq!(all, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn generation_is_deterministic() {
        for g in [Generator::GaussianBlobs, Generator::TexturePatches] {
            let spec = small(ClassCounts::Constant { per_class: 5 }, 3, g);
            assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        }
    }

    #[test]
    fn zipf_counts_follow_formula() {
        let spec = small(ClassCounts::Zipf { s: 1.0, total: 1000 }, 10, Generator::GaussianBlobs);
        let counts = spec.class_counts();
        let h: f64 = (1..=10).map(|c| 1.0 / c as f64).sum();
        for (i, &n) in counts.iter().enumerate() {
            assert_eq!(n, (1000.0 / ((i + 1) as f64 * h)).ceil() as usize);
        }
        let ratio = counts[0] as f64 / counts[9] as f64;
        assert!((9.0..=11.0).contains(&ratio), "{ratio}");
        assert!(counts.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn lt_mini_keeps_every_class_in_both_splits() {
        let spec = DatasetSpec::lt_mini();
        spec.validate().unwrap();
        let counts = spec.class_counts();
        assert!(counts.iter().all(|&n| split_counts(n).0 >= 2 && split_counts(n).1 >= 1));
    }

    #[test]
    fn load_batch_contracts() {
        let d = generate(&small(ClassCounts::Constant { per_class: 8 }, 3, Generator::TexturePatches)).unwrap();
        assert_eq!(load_batch(&d, Split::Train, &[], true).unwrap_err(), Error::BatchSize(0));
        let n = d.split.train.len();
        assert!(matches!(load_batch(&d, Split::Train, &[n], true), Err(Error::Index { .. })));
        let b = load_batch(&d, Split::Train, &[2, 2], false).unwrap();
        assert_eq!(b.image(0), b.image(1));
        assert_eq!(b.labels.row(0), b.labels.row(1));
    }

    #[test]
    fn standardized_train_split_is_centred() {
        let d = generate(&small(ClassCounts::Constant { per_class: 40 }, 4, Generator::GaussianBlobs)).unwrap();
        let idx: Vec<usize> = (0..d.split.train.len()).collect();
        let b = load_batch(&d, Split::Train, &idx, true).unwrap();
        let plane = 64;
        for ch in 0..3 {
            let mut s = 0.0;
            for i in 0..b.n {
                s += b.image(i)[ch * plane..(ch + 1) * plane].iter().sum::<f64>();
            }
            let mean = s / (b.n * plane) as f64;
            assert!(mean.abs() < 1e-2, "{mean}");
        }
    }

    #[test]
    fn rejects_too_few_samples() {
        assert!(small(ClassCounts::Constant { per_class: 2 }, 2, Generator::GaussianBlobs).validate().is_err());
    }

    #[test]
    fn linear_classifier_learns_balanced_blobs() {
        let mut spec = small(ClassCounts::Constant { per_class: 100 }, 10, Generator::GaussianBlobs);
        spec.seed = 21;
        let d = generate(&spec).unwrap();
        let tr: Vec<usize> = (0..d.split.train.len()).collect();
        let va: Vec<usize> = (0..d.split.val.len()).collect();
        let train = load_batch(&d, Split::Train, &tr, true).unwrap();
        let val = load_batch(&d, Split::Val, &va, true).unwrap();
        let (x, y) = (flatten(&train), train.labels.clone());
        let mut w = Matrix::zeros(10, x.cols());
        let lr = 0.5 / x.rows() as f64;
        for _ in 0..500 {
            let g = linear_softmax_gradient(&w, &x, &y).unwrap();
            w.axpy(-lr, &g).unwrap();
        }
        let logits = flatten(&val).matmul_nt(&w).unwrap();
        let m = crate::vit::classification_metrics(&logits, &d.targets(Split::Val)).unwrap();
        assert!(m.top1 >= 0.8, "{}", m.top1);
    }
}
