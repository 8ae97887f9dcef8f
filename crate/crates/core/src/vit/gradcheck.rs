use alloc::string::String;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
#[allow(unused_imports)]
use num_traits::Float as _;

use super::{forward, loss_and_backward, soft_cross_entropy, VitConfig, VitModel};
use crate::error::Result;
use crate::param::ParamFamily;
use crate::recipes::ImageBatch;

/// Central-difference step.
pub const GRADCHECK_STEP: f64 = 1e-4;

/// Two 8x8 two-channel images cut into four 4x4 patches, two layers.
pub fn micro_config() -> VitConfig {
    VitConfig {
        image_size: 8,
        patch_size: 4,
        channels: 2,
        embed_dim: 8,
        depth: 2,
        heads: 2,
        mlp_ratio: 2.0,
        num_classes: 3,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckEntry {
    pub name: String,
    pub family: ParamFamily,
    /// `‖g − ĝ‖_F / max(‖g‖_F, ‖ĝ‖_F)`, zero when both vanish.
    pub rel_error: f64,
    pub max_abs_error: f64,
    pub elements: usize,
}

fn loss_at(model: &VitModel, batch: &ImageBatch) -> Result<f64> {
    let (logits, _) = forward(model, batch)?;
    Ok(soft_cross_entropy(&logits, &batch.labels)?.0)
}

/// Compare analytic gradients of every block against central differences
/// with step `h`.
pub fn gradcheck(model: &VitModel, batch: &ImageBatch, h: f64) -> Result<Vec<GradCheckEntry>> {
    let mut m = model.clone();
    let (_, cache) = forward(&m, batch)?;
    loss_and_backward(&mut m, batch, &cache)?;
    let analytic: Vec<_> = m.blocks().iter().map(|b| b.grad.clone()).collect();
    let mut out = Vec::with_capacity(analytic.len());
    for (bi, g) in analytic.iter().enumerate() {
        let mut diff2 = 0.0;
        let mut fd2 = 0.0;
        let mut worst: f64 = 0.0;
        for k in 0..g.len() {
            let orig = m.blocks()[bi].value.data()[k];
            m.blocks_mut()[bi].value.data_mut()[k] = orig + h;
            let up = loss_at(&m, batch)?;
            m.blocks_mut()[bi].value.data_mut()[k] = orig - h;
            let down = loss_at(&m, batch)?;
            m.blocks_mut()[bi].value.data_mut()[k] = orig;
            let fd = (up - down) / (2.0 * h);
            let e = g.data()[k] - fd;
            diff2 += e * e;
            fd2 += fd * fd;
            worst = worst.max(e.abs());
        }
        let denom = fd2.sqrt().max(g.frobenius_norm());
        let b = &m.blocks()[bi];
        out.push(GradCheckEntry {
            name: b.name.clone(),
            family: b.family,
            rel_error: if denom == 0.0 { 0.0 } else { diff2.sqrt() / denom },
            max_abs_error: worst,
            elements: g.len(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::recipes::tests::random_batch;
    use crate::rng::stream;
    use rand::Rng;

    #[test]
    fn every_block_family_matches_finite_differences() {
        let model = VitModel::new(micro_config(), &mut stream(11, &[])).unwrap();
        let mut batch = random_batch(2, 2, 8, 3, 12);
        // Soft labels exercise the general cross-entropy gradient.
        let mut rng = stream(13, &[]);
        batch.labels = Matrix::from_fn(2, 3, |_, _| rng.random::<f64>() + 0.1);
        for i in 0..2 {
            let s: f64 = batch.labels.row(i).iter().sum();
            batch.labels.row_mut(i).iter_mut().for_each(|v| *v /= s);
        }
        let report = gradcheck(&model, &batch, GRADCHECK_STEP).unwrap();
        for e in &report {
            assert!(e.rel_error <= 1e-4, "{}: {}", e.name, e.rel_error);
        }
        for f in ParamFamily::ALL {
            assert!(report.iter().any(|e| e.family == f), "{f} not covered");
        }
    }
}
