use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
#[allow(unused_imports)]
use num_traits::Float as _;
use rand::Rng;

use super::{ImageBatch, PIXEL_BOUND};
use crate::error::{Error, Result};

/// Magnitudes are integers in `[0, MAX_MAGNITUDE]`; an operation at magnitude
/// `m` uses `m / MAX_MAGNITUDE` of its maximum range.
pub const MAX_MAGNITUDE: u32 = 30;

const MAX_SHEAR: f64 = 0.3;
const MAX_TRANSLATE: f64 = 0.45;
const MAX_ROTATE_DEG: f64 = 30.0;
/// Additive shift, in standardized units.
const MAX_BRIGHTNESS: f64 = 0.9;
/// Relative change of the deviation from the per-channel mean.
const MAX_CONTRAST: f64 = 0.9;
/// Quantization step, in standardized units.
const MAX_POSTERIZE_STEP: f64 = 0.5;

/// The fixed operation pool. Geometric operations resample with nearest
/// neighbour and fill uncovered pixels with 0 (the standardized mean);
/// photometric operations act on standardized values.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AugOp {
    ShearX,
    ShearY,
    TranslateX,
    TranslateY,
    Rotate,
    Brightness,
    Contrast,
    Posterize,
    Solarize,
}

impl AugOp {
    pub const POOL: [AugOp; 9] = [
        AugOp::ShearX,
        AugOp::ShearY,
        AugOp::TranslateX,
        AugOp::TranslateY,
        AugOp::Rotate,
        AugOp::Brightness,
        AugOp::Contrast,
        AugOp::Posterize,
        AugOp::Solarize,
    ];
}

fn resample(img: &mut [f64], c: usize, h: usize, w: usize, src: impl Fn(f64, f64) -> (f64, f64)) {
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let orig: Vec<f64> = img.to_vec();
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = src(y as f64 - cy, x as f64 - cx);
            let (sy, sx) = ((sy + cy).round(), (sx + cx).round());
            let inside = sy >= 0.0 && sx >= 0.0 && sy < h as f64 && sx < w as f64;
            for ch in 0..c {
                img[ch * h * w + y * w + x] = if inside {
                    orig[ch * h * w + sy as usize * w + sx as usize]
                } else {
                    0.0
                };
            }
        }
    }
}

/// Apply one operation to a single CHW image at signed level in `[-1, 1]`.
/// Level zero is the identity for every operation.
pub fn apply_op(img: &mut [f64], c: usize, h: usize, w: usize, op: AugOp, level: f64) {
    if level == 0.0 {
        return;
    }
    let mag = level.abs();
    match op {
        AugOp::ShearX => {
            let s = MAX_SHEAR * level;
            resample(img, c, h, w, |y, x| (y, x + s * y));
        }
        AugOp::ShearY => {
            let s = MAX_SHEAR * level;
            resample(img, c, h, w, |y, x| (y + s * x, x));
        }
        AugOp::TranslateX => {
            let d = (MAX_TRANSLATE * level * w as f64).round();
            resample(img, c, h, w, |y, x| (y, x + d));
        }
        AugOp::TranslateY => {
            let d = (MAX_TRANSLATE * level * h as f64).round();
            resample(img, c, h, w, |y, x| (y + d, x));
        }
        AugOp::Rotate => {
            let t = (MAX_ROTATE_DEG * level).to_radians();
            let (s, co) = t.sin_cos();
            resample(img, c, h, w, |y, x| (co * y - s * x, s * y + co * x));
        }
        AugOp::Brightness => {
            let d = MAX_BRIGHTNESS * level;
            img.iter_mut().for_each(|v| *v += d);
        }
        AugOp::Contrast => {
            let f = 1.0 + MAX_CONTRAST * level;
            for ch in img.chunks_mut(h * w) {
                let mean = ch.iter().sum::<f64>() / ch.len() as f64;
                ch.iter_mut().for_each(|v| *v = mean + f * (*v - mean));
            }
        }
        AugOp::Posterize => {
            let q = MAX_POSTERIZE_STEP * mag;
            img.iter_mut().for_each(|v| *v = (*v / q).floor() * q);
        }
        AugOp::Solarize => {
            let threshold = PIXEL_BOUND * (1.0 - mag);
            img.iter_mut().for_each(|v| {
                if *v > threshold {
                    *v = -*v;
                }
            });
        }
    }
    img.iter_mut().for_each(|v| *v = v.clamp(-PIXEL_BOUND, PIXEL_BOUND));
}

/// Per image, apply `ops` operations drawn uniformly (with replacement) from
/// [`AugOp::POOL`], each with a random sign at `magnitude / 30` of its range.
pub fn rand_augment_lite<R: Rng + ?Sized>(
    batch: &ImageBatch,
    ops: usize,
    magnitude: u32,
    rng: &mut R,
) -> Result<ImageBatch> {
    if magnitude > MAX_MAGNITUDE {
        return Err(Error::Config(alloc::format!(
            "magnitude {magnitude} above {MAX_MAGNITUDE}"
        )));
    }
    let mut out = batch.clone();
    if ops == 0 {
        return Ok(out);
    }
    let frac = magnitude as f64 / MAX_MAGNITUDE as f64;
    let (c, h, w) = (batch.c, batch.h, batch.w);
    for i in 0..batch.n {
        for _ in 0..ops {
            let op = AugOp::POOL[rng.random_range(0..AugOp::POOL.len())];
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            apply_op(out.image_mut(i), c, h, w, op, sign * frac);
        }
    }
    Ok(out)
}
