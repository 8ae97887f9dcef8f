use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
#[allow(unused_imports)]
use num_traits::Float as _;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};

use super::{ImageBatch, MixKind, MixRecord, PIXEL_BOUND};
use crate::error::{Error, Result};

/// Half-open pixel rectangle `[y0, y1) x [x0, x1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BBox {
    pub y0: usize,
    pub y1: usize,
    pub x0: usize,
    pub x1: usize,
}

impl BBox {
    pub fn area(&self) -> usize {
        (self.y1 - self.y0) * (self.x1 - self.x0)
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.y0..self.y1).contains(&y) && (self.x0..self.x1).contains(&x)
    }
}

fn draw_lambda<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<f64> {
    let beta = Beta::new(alpha, alpha)
        .map_err(|e| Error::Config(alloc::format!("invalid mixing alpha {alpha}: {e}")))?;
    Ok(beta.sample(rng))
}

fn draw_partners<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

fn check_partners(batch: &ImageBatch, partners: &[usize]) -> Result<()> {
    if batch.n < 2 {
        return Err(Error::BatchSize(batch.n));
    }
    if partners.len() != batch.n {
        return Err(Error::Shape(alloc::format!(
            "{} partners for a batch of {}",
            partners.len(),
            batch.n
        )));
    }
    if let Some(&bad) = partners.iter().find(|&&j| j >= batch.n) {
        return Err(Error::Index {
            index: bad,
            len: batch.n,
        });
    }
    Ok(())
}

fn mix_labels(batch: &ImageBatch, out: &mut ImageBatch, weight: f64, partners: &[usize]) {
    for (i, &j) in partners.iter().enumerate() {
        let mixed: Vec<f64> = batch
            .labels
            .row(i)
            .iter()
            .zip(batch.labels.row(j))
            .map(|(a, b)| weight * a + (1.0 - weight) * b)
            .collect();
        out.labels.row_mut(i).copy_from_slice(&mixed);
    }
}

/// Mixup with `λ ~ Beta(alpha, alpha)` and a random permutation of partners.
pub fn mixup<R: Rng + ?Sized>(batch: &ImageBatch, alpha: f64, rng: &mut R) -> Result<ImageBatch> {
    if batch.n < 2 {
        return Err(Error::BatchSize(batch.n));
    }
    let lambda = draw_lambda(alpha, rng)?;
    let partners = draw_partners(batch.n, rng);
    mixup_with(batch, lambda, &partners)
}

/// Mixup with given coefficient and partners: example `i` becomes
/// `λ·xᵢ + (1−λ)·x_{partners[i]}`, labels likewise.
pub fn mixup_with(batch: &ImageBatch, lambda: f64, partners: &[usize]) -> Result<ImageBatch> {
    check_partners(batch, partners)?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(alloc::format!("mixup lambda {lambda} outside [0, 1]")));
    }
    let mut out = batch.clone();
    for (i, &j) in partners.iter().enumerate() {
        let (xi, xj) = (batch.image(i), batch.image(j));
        for (o, (a, b)) in out.image_mut(i).iter_mut().zip(xi.iter().zip(xj)) {
            *o = (lambda * a + (1.0 - lambda) * b).clamp(-PIXEL_BOUND, PIXEL_BOUND);
        }
    }
    mix_labels(batch, &mut out, lambda, partners);
    out.mix = Some(MixRecord {
        kind: MixKind::Mixup,
        lambda,
        label_weight: lambda,
        partners: partners.to_vec(),
        bbox: None,
    });
    Ok(out)
}

/// Rectangle of nominal area fraction `1 − λ` centred at a uniform pixel and
/// clipped to the image.
pub fn rand_bbox<R: Rng + ?Sized>(h: usize, w: usize, lambda: f64, rng: &mut R) -> BBox {
    let cut = (1.0 - lambda).max(0.0).sqrt();
    let ch = (h as f64 * cut) as usize;
    let cw = (w as f64 * cut) as usize;
    let cy = rng.random_range(0..h) as isize;
    let cx = rng.random_range(0..w) as isize;
    let clip = |v: isize, hi: usize| v.clamp(0, hi as isize) as usize;
    BBox {
        y0: clip(cy - (ch / 2) as isize, h),
        y1: clip(cy + (ch / 2) as isize, h),
        x0: clip(cx - (cw / 2) as isize, w),
        x1: clip(cx + (cw / 2) as isize, w),
    }
}

/// CutMix with `λ ~ Beta(alpha, alpha)`, random partners and a random box.
pub fn cutmix<R: Rng + ?Sized>(batch: &ImageBatch, alpha: f64, rng: &mut R) -> Result<ImageBatch> {
    if batch.n < 2 {
        return Err(Error::BatchSize(batch.n));
    }
    if batch.h < 2 || batch.w < 2 {
        return Err(Error::Shape(alloc::format!(
            "cutmix needs images of at least 2x2, got {}x{}",
            batch.h,
            batch.w
        )));
    }
    let lambda = draw_lambda(alpha, rng)?;
    let partners = draw_partners(batch.n, rng);
    let bbox = rand_bbox(batch.h, batch.w, lambda, rng);
    cutmix_with(batch, lambda, bbox, &partners)
}

/// Paste `bbox` from each partner image. The label weight on the partner is
/// the realized pasted-area fraction.
pub fn cutmix_with(batch: &ImageBatch, lambda: f64, bbox: BBox, partners: &[usize]) -> Result<ImageBatch> {
    check_partners(batch, partners)?;
    if bbox.y0 > bbox.y1 || bbox.x0 > bbox.x1 || bbox.y1 > batch.h || bbox.x1 > batch.w {
        return Err(Error::Shape(alloc::format!("box {bbox:?} outside {}x{}", batch.h, batch.w)));
    }
    let mut out = batch.clone();
    let (h, w) = (batch.h, batch.w);
    for (i, &j) in partners.iter().enumerate() {
        let src = batch.image(j);
        let dst = out.image_mut(i);
        for ch in 0..batch.c {
            for y in bbox.y0..bbox.y1 {
                let off = ch * h * w + y * w;
                dst[off + bbox.x0..off + bbox.x1].copy_from_slice(&src[off + bbox.x0..off + bbox.x1]);
            }
        }
    }
    let weight = 1.0 - bbox.area() as f64 / (h * w) as f64;
    mix_labels(batch, &mut out, weight, partners);
    out.mix = Some(MixRecord {
        kind: MixKind::CutMix,
        lambda,
        label_weight: weight,
        partners: partners.to_vec(),
        bbox: Some(bbox),
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recipes::tests::random_batch;
    use crate::rng::stream;

    #[test]
    fn lambda_one_leaves_batch_unchanged() {
        let b = random_batch(4, 3, 6, 5, 1);
        let out = mixup_with(&b, 1.0, &[2, 3, 0, 1]).unwrap();
        assert_eq!(out.pixels, b.pixels);
        assert_eq!(out.labels, b.labels);
    }

    #[test]
    fn half_mix_of_two_one_hots() {
        let mut b = random_batch(2, 1, 4, 10, 2);
        b.labels = ImageBatch::one_hot(&[3, 7], 10).unwrap();
        let out = mixup_with(&b, 0.5, &[1, 0]).unwrap();
        for i in 0..2 {
            assert_eq!(out.labels[(i, 3)], 0.5);
            assert_eq!(out.labels[(i, 7)], 0.5);
        }
    }

    #[test]
    fn mixup_keeps_simplex() {
        for seed in 0..100 {
            let b = random_batch(5, 2, 4, 6, seed);
            let out = mixup(&b, 0.8, &mut stream(seed, &[7])).unwrap();
            assert!(out.simplex_defect() < 1e-6);
            let rec = out.mix.unwrap();
            assert!((0.0..=1.0).contains(&rec.lambda));
            let mut sorted = rec.partners.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, (0..5).collect::<Vec<_>>());
        }
    }

    #[test]
    fn batch_size_errors() {
        let b = random_batch(1, 1, 4, 2, 1);
        assert_eq!(mixup(&b, 0.8, &mut stream(0, &[])).unwrap_err(), Error::BatchSize(1));
        assert_eq!(cutmix(&b, 1.0, &mut stream(0, &[])).unwrap_err(), Error::BatchSize(1));
    }

    #[test]
    fn empty_box_is_identity() {
        let b = random_batch(3, 3, 5, 4, 3);
        let bbox = BBox { y0: 2, y1: 2, x0: 0, x1: 5 };
        let out = cutmix_with(&b, 0.3, bbox, &[1, 2, 0]).unwrap();
        assert_eq!(out.pixels, b.pixels);
        assert_eq!(out.labels, b.labels);
    }

    #[test]
    fn full_box_takes_partner() {
        let b = random_batch(3, 3, 5, 4, 4);
        let bbox = BBox { y0: 0, y1: 5, x0: 0, x1: 5 };
        let out = cutmix_with(&b, 0.0, bbox, &[1, 2, 0]).unwrap();
        for (i, j) in [(0, 1), (1, 2), (2, 0)] {
            assert_eq!(out.image(i), b.image(j));
            assert_eq!(out.labels.row(i), b.labels.row(j));
        }
    }

    #[test]
    fn cutmix_label_weight_is_pasted_fraction() {
        for seed in 0..100 {
            let mut b = random_batch(4, 1, 8, 3, seed);
            // Mark each image with a distinct constant so pasted pixels are countable.
            for i in 0..4 {
                b.image_mut(i).fill(i as f64);
            }
            let out = cutmix(&b, 1.0, &mut stream(seed, &[8])).unwrap();
            let rec = out.mix.clone().unwrap();
            for i in 0..4 {
                let j = rec.partners[i];
                let pasted = if i == j {
                    rec.bbox.unwrap().area()
                } else {
                    out.image(i).iter().filter(|v| **v == j as f64).count()
                };
                let frac = pasted as f64 / 64.0;
                assert_eq!(rec.label_weight, 1.0 - frac);
            }
            assert!(out.simplex_defect() < 1e-6);
        }
    }

    #[test]
    fn bbox_is_clipped() {
        let mut rng = stream(5, &[]);
        for _ in 0..200 {
            let lam: f64 = rng.random();
            let b = rand_bbox(7, 9, lam, &mut rng);
            assert!(b.y0 <= b.y1 && b.y1 <= 7 && b.x0 <= b.x1 && b.x1 <= 9);
        }
    }
}
