use alloc::vec;
use alloc::vec::Vec;

use super::{forward, soft_cross_entropy, VitModel};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::recipes::ImageBatch;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Metrics {
    pub top1: f64,
    /// Unweighted mean of per-class accuracies.
    pub macro_top1: f64,
    pub loss: f64,
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Top-1 and macro top-1 from logits and integer targets; `loss` is the
/// mean cross-entropy against the one-hot targets. Every class must occur
/// at least once.
pub fn classification_metrics(logits: &Matrix, targets: &[usize]) -> Result<Metrics> {
    let c = logits.cols();
    if logits.rows() != targets.len() {
        return Err(Error::Shape(alloc::format!(
            "{} logit rows for {} targets",
            logits.rows(),
            targets.len()
        )));
    }
    let mut seen = vec![0usize; c];
    let mut hit = vec![0usize; c];
    for (i, &t) in targets.iter().enumerate() {
        if t >= c {
            return Err(Error::Index { index: t, len: c });
        }
        seen[t] += 1;
        if argmax(logits.row(i)) == t {
            hit[t] += 1;
        }
    }
    let empty: Vec<usize> = (0..c).filter(|&k| seen[k] == 0).collect();
    if !empty.is_empty() {
        return Err(Error::EmptyClasses(empty));
    }
    let top1 = hit.iter().sum::<usize>() as f64 / targets.len() as f64;
    let macro_top1 = (0..c).map(|k| hit[k] as f64 / seen[k] as f64).sum::<f64>() / c as f64;
    let (loss, _) = soft_cross_entropy(logits, &ImageBatch::one_hot(targets, c)?)?;
    Ok(Metrics { top1, macro_top1, loss })
}

/// Evaluate on a labelled image set in chunks of at most `chunk` images.
pub fn evaluate(model: &VitModel, images: &ImageBatch, targets: &[usize], chunk: usize) -> Result<Metrics> {
    if targets.len() != images.n {
        return Err(Error::Shape(alloc::format!("{} targets for {} images", targets.len(), images.n)));
    }
    let chunk = chunk.max(1);
    let classes = model.config().num_classes;
    let mut logits = Matrix::zeros(images.n, classes);
    let mut start = 0;
    while start < images.n {
        let end = (start + chunk).min(images.n);
        let pixels = images.pixels[start * images.image_len()..end * images.image_len()].to_vec();
        let labels = ImageBatch::one_hot(&targets[start..end], classes)?;
        let sub = ImageBatch::new(end - start, images.c, images.h, images.w, pixels, labels)?;
        let (out, _) = forward(model, &sub)?;
        for r in 0..out.rows() {
            logits.row_mut(start + r).copy_from_slice(out.row(r));
        }
        start = end;
    }
    classification_metrics(&logits, targets)
}
