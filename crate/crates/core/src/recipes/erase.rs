use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
#[allow(unused_imports)]
use num_traits::Float as _;
use rand::Rng;

use super::{BBox, ImageBatch};
use crate::error::Result;

/// Range of the erased area as a fraction of the image.
pub const ERASE_AREA: (f64, f64) = (0.02, 0.33);
/// Range of the erased rectangle's aspect ratio (height / width), sampled
/// log-uniformly.
pub const ERASE_ASPECT: (f64, f64) = (0.3, 3.3);
/// Erased pixels are replaced by independent uniform noise in
/// `[-ERASE_NOISE, ERASE_NOISE]`.
pub const ERASE_NOISE: f64 = 1.0;

/// Rectangle chosen for one image, or `None` when the image is left alone.
pub type EraseRect = Option<BBox>;

fn draw_rect<R: Rng + ?Sized>(h: usize, w: usize, rng: &mut R) -> BBox {
    let area = rng.random_range(ERASE_AREA.0..=ERASE_AREA.1) * (h * w) as f64;
    let log_aspect = rng.random_range(ERASE_ASPECT.0.ln()..=ERASE_ASPECT.1.ln());
    let aspect = log_aspect.exp();
    // Dimensions are clamped into the image rather than re-drawn.
    let eh = ((area * aspect).sqrt().round() as usize).clamp(1, h);
    let ew = ((area / aspect).sqrt().round() as usize).clamp(1, w);
    let y0 = rng.random_range(0..=h - eh);
    let x0 = rng.random_range(0..=w - ew);
    BBox {
        y0,
        y1: y0 + eh,
        x0,
        x1: x0 + ew,
    }
}

/// With probability `prob` per image, replace a random rectangle (all
/// channels) with uniform noise. Labels are untouched.
pub fn random_erase<R: Rng + ?Sized>(batch: &ImageBatch, prob: f64, rng: &mut R) -> Result<ImageBatch> {
    if prob <= 0.0 {
        return Ok(batch.clone());
    }
    let rects: Vec<EraseRect> = (0..batch.n)
        .map(|_| {
            if rng.random::<f64>() < prob {
                Some(draw_rect(batch.h, batch.w, rng))
            } else {
                None
            }
        })
        .collect();
    random_erase_with(batch, &rects, rng)
}

/// Erase the given per-image rectangles, filling from `rng`.
pub fn random_erase_with<R: Rng + ?Sized>(
    batch: &ImageBatch,
    rects: &[EraseRect],
    rng: &mut R,
) -> Result<ImageBatch> {
    if rects.len() != batch.n {
        return Err(crate::error::Error::Shape(alloc::format!(
            "{} erase rectangles for {} images",
            rects.len(),
            batch.n
        )));
    }
    let mut out = batch.clone();
    let (c, h, w) = (batch.c, batch.h, batch.w);
    for (i, rect) in rects.iter().enumerate() {
        let Some(r) = rect else { continue };
        let img = out.image_mut(i);
        for ch in 0..c {
            for y in r.y0..r.y1.min(h) {
                for x in r.x0..r.x1.min(w) {
                    img[ch * h * w + y * w + x] = rng.random_range(-ERASE_NOISE..=ERASE_NOISE);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recipes::tests::random_batch;
    use crate::rng::stream;

    #[test]
    fn zero_probability_is_identity() {
        let b = random_batch(5, 3, 8, 4, 1);
        assert_eq!(random_erase(&b, 0.0, &mut stream(1, &[])).unwrap(), b);
    }

    #[test]
    fn full_rectangle_replaces_everything() {
        let b = random_batch(2, 3, 8, 4, 2);
        let full = Some(BBox { y0: 0, y1: 8, x0: 0, x1: 8 });
        let out = random_erase_with(&b, &[full, full], &mut stream(2, &[])).unwrap();
        assert_eq!(out.labels, b.labels);
        for (a, o) in b.pixels.iter().zip(&out.pixels) {
            assert_ne!(a, o);
            assert!(o.abs() <= ERASE_NOISE);
        }
    }

    #[test]
    fn erase_rate_concentrates() {
        let b = random_batch(1000, 1, 8, 2, 3);
        let out = random_erase(&b, 0.25, &mut stream(3, &[])).unwrap();
        let erased = (0..1000).filter(|&i| out.image(i) != b.image(i)).count();
        let frac = erased as f64 / 1000.0;
        assert!((0.20..=0.30).contains(&frac), "{frac}");
    }

    #[test]
    fn rectangles_fit_and_respect_area() {
        let mut rng = stream(4, &[]);
        for _ in 0..500 {
            let r = draw_rect(16, 16, &mut rng);
            assert!(r.y1 <= 16 && r.x1 <= 16 && r.area() >= 1);
            assert!(r.area() as f64 <= 0.5 * 256.0);
        }
    }
}
