use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
#[allow(unused_imports)]
use num_traits::Float as _;

use super::*;
use crate::error::{Error, Result};
use crate::linalg::{dot, gemm_nn, gemm_nt, gemm_tn, Matrix};
use crate::recipes::ImageBatch;
use crate::rng::mix64;

#[derive(Clone, Debug)]
struct LnCache {
    xhat: Matrix,
    rstd: Vec<f64>,
}

#[derive(Clone, Debug)]
struct LayerCache {
    ln1: LnCache,
    h1: Matrix,
    qkv: Matrix,
    /// Attention probabilities, one `T x T` block per (image, head), image-major.
    probs: Vec<f64>,
    ctx: Matrix,
    ln2: LnCache,
    h2: Matrix,
    pre: Matrix,
    act: Matrix,
}

/// Activations retained by [`forward`] for [`loss_and_backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    version: u64,
    fingerprint: u64,
    n: usize,
    patches: Matrix,
    layers: Vec<LayerCache>,
    final_ln: LnCache,
    pooled: Matrix,
    logits: Matrix,
}

impl ForwardCache {
    pub fn logits(&self) -> &Matrix {
        &self.logits
    }

    pub fn batch_size(&self) -> usize {
        self.n
    }

    /// Normalized class-token features fed to the head (`n x embed_dim`).
    pub fn pooled(&self) -> &Matrix {
        &self.pooled
    }
}

fn fingerprint(batch: &ImageBatch) -> u64 {
    let mut h = mix64(batch.n as u64 ^ ((batch.c as u64) << 16) ^ ((batch.h as u64) << 32) ^ ((batch.w as u64) << 48));
    for v in &batch.pixels {
        h = mix64(h ^ v.to_bits());
    }
    h
}

fn check_batch(cfg: &VitConfig, batch: &ImageBatch) -> Result<()> {
    if batch.c != cfg.channels || batch.h != cfg.image_size || batch.w != cfg.image_size {
        return Err(Error::Shape(alloc::format!(
            "batch images are {}x{}x{}, model expects {}x{}x{}",
            batch.c,
            batch.h,
            batch.w,
            cfg.channels,
            cfg.image_size,
            cfg.image_size
        )));
    }
    if batch.num_classes() != cfg.num_classes {
        return Err(Error::Shape(alloc::format!(
            "labels have {} classes, model has {}",
            batch.num_classes(),
            cfg.num_classes
        )));
    }
    if batch.n == 0 {
        return Err(Error::BatchSize(0));
    }
    Ok(())
}

/// Rows `i * P + gy * G + gx`; each row lists the patch as (channel, y, x).
fn patchify(cfg: &VitConfig, batch: &ImageBatch) -> Matrix {
    let (p, g, c, hw) = (cfg.patch_size, cfg.grid(), cfg.channels, cfg.image_size);
    let np = cfg.num_patches();
    let mut out = Matrix::zeros(batch.n * np, cfg.patch_dim());
    for i in 0..batch.n {
        let img = batch.image(i);
        for gy in 0..g {
            for gx in 0..g {
                let row = out.row_mut(i * np + gy * g + gx);
                let mut k = 0;
                for ch in 0..c {
                    for py in 0..p {
                        let off = ch * hw * hw + (gy * p + py) * hw + gx * p;
                        row[k..k + p].copy_from_slice(&img[off..off + p]);
                        k += p;
                    }
                }
            }
        }
    }
    out
}

/// `x · Wᵀ + b`
fn linear(x: &Matrix, w: &Matrix, b: &[f64]) -> Matrix {
    let mut y = Matrix::zeros(x.rows(), w.rows());
    gemm_nt(x, w, &mut y, 1.0, 0.0);
    for r in 0..y.rows() {
        y.row_mut(r).iter_mut().zip(b).for_each(|(v, bi)| *v += bi);
    }
    y
}

/// Writes `dW = dyᵀ x`, `db = Σ dy` and returns `dx = dy W`.
fn linear_back(dy: &Matrix, x: &Matrix, w: &Matrix, dw: &mut Matrix, db: &mut Matrix) -> Matrix {
    gemm_tn(dy, x, dw, 1.0, 0.0);
    let dbv = db.data_mut();
    dbv.fill(0.0);
    for r in 0..dy.rows() {
        dbv.iter_mut().zip(dy.row(r)).for_each(|(a, v)| *a += v);
    }
    let mut dx = Matrix::zeros(dy.rows(), w.cols());
    gemm_nn(dy, w, &mut dx, 1.0, 0.0);
    dx
}

fn layer_norm(x: &Matrix, g: &[f64], b: &[f64]) -> (Matrix, LnCache) {
    let d = x.cols();
    let mut xhat = Matrix::zeros(x.rows(), d);
    let mut y = Matrix::zeros(x.rows(), d);
    let mut rstd = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let s = 1.0 / (var + LN_EPS).sqrt();
        rstd.push(s);
        let xh = xhat.row_mut(r);
        for (k, v) in row.iter().enumerate() {
            xh[k] = (v - mean) * s;
        }
        let yr = y.row_mut(r);
        for k in 0..d {
            yr[k] = xhat[(r, k)] * g[k] + b[k];
        }
    }
    (y, LnCache { xhat, rstd })
}

fn layer_norm_back(dy: &Matrix, cache: &LnCache, g: &[f64], dg: &mut Matrix, db: &mut Matrix) -> Matrix {
    let d = dy.cols();
    let dgv = dg.data_mut();
    dgv.fill(0.0);
    let dbv = db.data_mut();
    dbv.fill(0.0);
    let mut dx = Matrix::zeros(dy.rows(), d);
    let mut dxhat = vec![0.0; d];
    for r in 0..dy.rows() {
        let dyr = dy.row(r);
        let xh = cache.xhat.row(r);
        for k in 0..d {
            dgv[k] += dyr[k] * xh[k];
            dbv[k] += dyr[k];
            dxhat[k] = dyr[k] * g[k];
        }
        let m1 = dxhat.iter().sum::<f64>() / d as f64;
        let m2 = dot(&dxhat, xh) / d as f64;
        let s = cache.rstd[r];
        let dxr = dx.row_mut(r);
        for k in 0..d {
            dxr[k] = s * (dxhat[k] - m1 - xh[k] * m2);
        }
    }
    dx
}

fn add_into(x: &mut Matrix, y: &Matrix) {
    x.data_mut().iter_mut().zip(y.data()).for_each(|(a, b)| *a += b);
}

fn attention(cfg: &VitConfig, n: usize, qkv: &Matrix) -> (Matrix, Vec<f64>) {
    let (t, d, dh, heads) = (cfg.tokens(), cfg.embed_dim, cfg.head_dim(), cfg.heads);
    let scale = 1.0 / (dh as f64).sqrt();
    let mut ctx = Matrix::zeros(n * t, d);
    let mut probs = vec![0.0; n * heads * t * t];
    for i in 0..n {
        for h in 0..heads {
            let a = &mut probs[(i * heads + h) * t * t..(i * heads + h + 1) * t * t];
            let (qo, ko, vo) = (h * dh, d + h * dh, 2 * d + h * dh);
            for r in 0..t {
                let q = &qkv.row(i * t + r)[qo..qo + dh];
                let arow = &mut a[r * t..(r + 1) * t];
                for (s, av) in arow.iter_mut().enumerate() {
                    *av = scale * dot(q, &qkv.row(i * t + s)[ko..ko + dh]);
                }
                softmax_in_place(arow);
                let crow = &mut ctx.row_mut(i * t + r)[qo..qo + dh];
                for (s, &w) in arow.iter().enumerate() {
                    let v = &qkv.row(i * t + s)[vo..vo + dh];
                    crow.iter_mut().zip(v).for_each(|(c, vv)| *c += w * vv);
                }
            }
        }
    }
    (ctx, probs)
}

fn attention_back(cfg: &VitConfig, n: usize, qkv: &Matrix, probs: &[f64], dctx: &Matrix) -> Matrix {
    let (t, d, dh, heads) = (cfg.tokens(), cfg.embed_dim, cfg.head_dim(), cfg.heads);
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dqkv = Matrix::zeros(n * t, 3 * d);
    let mut ds = vec![0.0; t];
    let mut q = vec![0.0; dh];
    let mut dq = vec![0.0; dh];
    for i in 0..n {
        for h in 0..heads {
            let a = &probs[(i * heads + h) * t * t..(i * heads + h + 1) * t * t];
            let (qo, ko, vo) = (h * dh, d + h * dh, 2 * d + h * dh);
            for r in 0..t {
                let arow = &a[r * t..(r + 1) * t];
                let dc = &dctx.row(i * t + r)[qo..qo + dh];
                // dA and dV
                for s in 0..t {
                    let v = &qkv.row(i * t + s)[vo..vo + dh];
                    ds[s] = dot(dc, v);
                    let dv = &mut dqkv.row_mut(i * t + s)[vo..vo + dh];
                    dv.iter_mut().zip(dc).for_each(|(x, g)| *x += arow[s] * g);
                }
                let inner = dot(&ds, arow);
                for s in 0..t {
                    ds[s] = arow[s] * (ds[s] - inner) * scale;
                }
                q.copy_from_slice(&qkv.row(i * t + r)[qo..qo + dh]);
                dq.fill(0.0);
                for s in 0..t {
                    let g = ds[s];
                    if g == 0.0 {
                        continue;
                    }
                    let krow = qkv.row(i * t + s);
                    dq.iter_mut().zip(&krow[ko..ko + dh]).for_each(|(a, kv)| *a += g * kv);
                    let dk = &mut dqkv.row_mut(i * t + s)[ko..ko + dh];
                    dk.iter_mut().zip(&q).for_each(|(a, qv)| *a += g * qv);
                }
                dqkv.row_mut(i * t + r)[qo..qo + dh].iter_mut().zip(&dq).for_each(|(a, v)| *a += v);
            }
        }
    }
    dqkv
}

/// Run the model on a batch. Logits are `n x num_classes`.
pub fn forward(model: &VitModel, batch: &ImageBatch) -> Result<(Matrix, ForwardCache)> {
    let cfg = model.config();
    check_batch(cfg, batch)?;
    let (n, t, np, d) = (batch.n, cfg.tokens(), cfg.num_patches(), cfg.embed_dim);
    let blocks = model.blocks();
    let patches = patchify(cfg, batch);
    let emb = linear(&patches, &blocks[PATCH_W].value, blocks[PATCH_B].value.data());
    let cls = blocks[CLS].value.data();
    let pos = &blocks[POS].value;
    let mut x = Matrix::zeros(n * t, d);
    for i in 0..n {
        for (k, v) in x.row_mut(i * t).iter_mut().enumerate() {
            *v = cls[k] + pos[(0, k)];
        }
        for p in 0..np {
            let src = emb.row(i * np + p);
            let pr = pos.row(p + 1);
            for (k, v) in x.row_mut(i * t + p + 1).iter_mut().enumerate() {
                *v = src[k] + pr[k];
            }
        }
    }
    let mut layers = Vec::with_capacity(cfg.depth);
    for l in 0..cfg.depth {
        let w = |k| &model.layer(l, k).value;
        let (h1, ln1) = layer_norm(&x, w(LN1_W).data(), w(LN1_B).data());
        let qkv = linear(&h1, w(QKV_W), w(QKV_B).data());
        let (ctx, probs) = attention(cfg, n, &qkv);
        add_into(&mut x, &linear(&ctx, w(PROJ_W), w(PROJ_B).data()));
        let (h2, ln2) = layer_norm(&x, w(LN2_W).data(), w(LN2_B).data());
        let pre = linear(&h2, w(FC1_W), w(FC1_B).data());
        let act = pre.map(gelu);
        add_into(&mut x, &linear(&act, w(FC2_W), w(FC2_B).data()));
        layers.push(LayerCache {
            ln1,
            h1,
            qkv,
            probs,
            ctx,
            ln2,
            h2,
            pre,
            act,
        });
    }
    let mut cls_rows = Matrix::zeros(n, d);
    for i in 0..n {
        cls_rows.row_mut(i).copy_from_slice(x.row(i * t));
    }
    let (pooled, final_ln) = layer_norm(&cls_rows, model.tail(0).value.data(), model.tail(1).value.data());
    let logits = linear(&pooled, &model.tail(2).value, model.tail(3).value.data());
    let cache = ForwardCache {
        version: model.version(),
        fingerprint: fingerprint(batch),
        n,
        patches,
        layers,
        final_ln,
        pooled,
        logits: logits.clone(),
    };
    Ok((logits, cache))
}

/// Mean over rows of `−Σ_c y_c log softmax(z)_c`, and its gradient in `z`.
pub fn soft_cross_entropy(logits: &Matrix, labels: &Matrix) -> Result<(f64, Matrix)> {
    if logits.shape() != labels.shape() {
        return Err(Error::Dimension {
            op: "soft_cross_entropy",
            lhs: logits.shape(),
            rhs: labels.shape(),
        });
    }
    let n = logits.rows();
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut dz = Matrix::zeros(n, logits.cols());
    for i in 0..n {
        let z = logits.row(i);
        let y = labels.row(i);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let ysum: f64 = y.iter().sum();
        loss -= y.iter().zip(z).map(|(yc, zc)| yc * (zc - lse)).sum::<f64>();
        for (c, g) in dz.row_mut(i).iter_mut().enumerate() {
            *g = ((z[c] - lse).exp() * ysum - y[c]) * inv_n;
        }
    }
    Ok((loss * inv_n, dz))
}

/// Soft-label cross-entropy (mean over the batch) and gradients written into
/// every block's `grad`. The cache must come from [`forward`] on the same
/// batch and unchanged parameters.
pub fn loss_and_backward(model: &mut VitModel, batch: &ImageBatch, cache: &ForwardCache) -> Result<f64> {
    backward_impl(model, batch, cache, None)
}

/// Backward pass; when `deltas` is given, the output gradient of every
/// linear layer is recorded alongside its block index.
fn backward_impl(
    model: &mut VitModel,
    batch: &ImageBatch,
    cache: &ForwardCache,
    mut deltas: Option<&mut Vec<(usize, Matrix)>>,
) -> Result<f64> {
    let mut record = |idx: usize, dy: &Matrix| {
        if let Some(d) = deltas.as_deref_mut() {
            d.push((idx, dy.clone()));
        }
    };
    if cache.version != model.version() || cache.n != batch.n || cache.fingerprint != fingerprint(batch) {
        return Err(Error::StaleCache);
    }
    let cfg = model.config().clone();
    let (n, t, np, d) = (batch.n, cfg.tokens(), cfg.num_patches(), cfg.embed_dim);
    let (loss, dlogits) = soft_cross_entropy(&cache.logits, &batch.labels)?;
    let tail = STEM + PER_LAYER * cfg.depth;
    let blocks = model.grads_mut();

    let (head, rest) = blocks[tail..].split_at_mut(2);
    let (hw, hb) = rest.split_at_mut(1);
    record(tail + 2, &dlogits);
    let dpooled = linear_back(&dlogits, &cache.pooled, &hw[0].value, &mut hw[0].grad, &mut hb[0].grad);
    let (ng, nb) = head.split_at_mut(1);
    let dcls = layer_norm_back(&dpooled, &cache.final_ln, ng[0].value.data(), &mut ng[0].grad, &mut nb[0].grad);

    let mut dx = Matrix::zeros(n * t, d);
    for i in 0..n {
        dx.row_mut(i * t).copy_from_slice(dcls.row(i));
    }
    for l in (0..cfg.depth).rev() {
        let lc = &cache.layers[l];
        let base = STEM + PER_LAYER * l;
        let lb = &mut blocks[base..base + PER_LAYER];
        // MLP branch
        let (a, b) = lb.split_at_mut(FC2_W);
        let (w2, b2) = b.split_at_mut(1);
        record(base + FC2_W, &dx);
        let mut dact = linear_back(&dx, &lc.act, &w2[0].value, &mut w2[0].grad, &mut b2[0].grad);
        dact.data_mut().iter_mut().zip(lc.pre.data()).for_each(|(g, &z)| *g *= gelu_grad(z));
        let (a, b) = a.split_at_mut(FC1_W);
        let (w1, b1) = b.split_at_mut(1);
        record(base + FC1_W, &dact);
        let dh2 = linear_back(&dact, &lc.h2, &w1[0].value, &mut w1[0].grad, &mut b1[0].grad);
        let (a, b) = a.split_at_mut(LN2_W);
        let (g2, bb2) = b.split_at_mut(1);
        add_into(&mut dx, &layer_norm_back(&dh2, &lc.ln2, g2[0].value.data(), &mut g2[0].grad, &mut bb2[0].grad));
        // attention branch
        let (a, b) = a.split_at_mut(PROJ_W);
        let (wp, bp) = b.split_at_mut(1);
        record(base + PROJ_W, &dx);
        let dctx = linear_back(&dx, &lc.ctx, &wp[0].value, &mut wp[0].grad, &mut bp[0].grad);
        let dqkv = attention_back(&cfg, n, &lc.qkv, &lc.probs, &dctx);
        let (a, b) = a.split_at_mut(QKV_W);
        let (wq, bq) = b.split_at_mut(1);
        record(base + QKV_W, &dqkv);
        let dh1 = linear_back(&dqkv, &lc.h1, &wq[0].value, &mut wq[0].grad, &mut bq[0].grad);
        let (g1, bb1) = a.split_at_mut(1);
        add_into(&mut dx, &layer_norm_back(&dh1, &lc.ln1, g1[0].value.data(), &mut g1[0].grad, &mut bb1[0].grad));
    }

    // stem
    let gpos = &mut blocks[POS].grad;
    gpos.fill(0.0);
    let mut demb = Matrix::zeros(n * np, d);
    let mut dcls_tok = vec![0.0; d];
    for i in 0..n {
        let r = dx.row(i * t);
        dcls_tok.iter_mut().zip(r).for_each(|(a, v)| *a += v);
        gpos.row_mut(0).iter_mut().zip(r).for_each(|(a, v)| *a += v);
        for p in 0..np {
            let r = dx.row(i * t + p + 1);
            demb.row_mut(i * np + p).copy_from_slice(r);
            gpos.row_mut(p + 1).iter_mut().zip(r).for_each(|(a, v)| *a += v);
        }
    }
    blocks[CLS].grad.data_mut().copy_from_slice(&dcls_tok);
    record(PATCH_W, &demb);
    let (pw, pb) = blocks[PATCH_W..=PATCH_B].split_at_mut(1);
    gemm_tn(&demb, &cache.patches, &mut pw[0].grad, 1.0, 0.0);
    let dbv = pb[0].grad.data_mut();
    dbv.fill(0.0);
    for r in 0..demb.rows() {
        dbv.iter_mut().zip(demb.row(r)).for_each(|(a, v)| *a += v);
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recipes::tests::random_batch;
    use crate::rng::stream;

    fn tiny() -> VitConfig {
        VitConfig {
            image_size: 4,
            patch_size: 2,
            channels: 2,
            embed_dim: 4,
            depth: 1,
            heads: 2,
            mlp_ratio: 2.0,
            num_classes: 3,
        }
    }

    #[test]
    fn zero_weights_give_head_bias() {
        let mut m = VitModel::new(tiny(), &mut stream(1, &[])).unwrap();
        for b in m.blocks_mut() {
            b.value.fill(0.0);
        }
        let head_b = m.blocks_mut().last_mut().unwrap();
        head_b.value.data_mut().copy_from_slice(&[0.5, -1.0, 2.0]);
        let batch = random_batch(3, 2, 4, 3, 7);
        let (logits, _) = forward(&m, &batch).unwrap();
        for i in 0..3 {
            assert_eq!(logits.row(i), &[0.5, -1.0, 2.0]);
        }
    }

    #[test]
    fn depth_zero_single_patch_depends_only_on_class_token() {
        let cfg = VitConfig {
            image_size: 4,
            patch_size: 4,
            depth: 0,
            ..tiny()
        };
        let m = VitModel::new(cfg, &mut stream(2, &[])).unwrap();
        let batch = random_batch(4, 2, 4, 3, 8);
        let (logits, _) = forward(&m, &batch).unwrap();
        // Independent evaluation of Head · LN(cls + pos₀) + b.
        let x: Vec<f64> = (0..4)
            .map(|k| m.block("cls_token").unwrap().value[(0, k)] + m.block("pos_embed").unwrap().value[(0, k)])
            .collect();
        let mean = x.iter().sum::<f64>() / 4.0;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        let z: Vec<f64> = x.iter().map(|v| (v - mean) / (var + LN_EPS).sqrt()).collect();
        let w = &m.block("head.weight").unwrap().value;
        for i in 0..4 {
            for c in 0..3 {
                let want: f64 = (0..4).map(|k| w[(c, k)] * z[k]).sum();
                assert!((logits[(i, c)] - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn identical_images_give_identical_rows() {
        let m = VitModel::new(tiny(), &mut stream(3, &[])).unwrap();
        let mut batch = random_batch(3, 2, 4, 3, 9);
        let first = batch.image(0).to_vec();
        for i in 1..3 {
            batch.image_mut(i).copy_from_slice(&first);
        }
        let (logits, _) = forward(&m, &batch).unwrap();
        assert_eq!(logits.row(0), logits.row(1));
        assert_eq!(logits.row(0), logits.row(2));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let m = VitModel::new(tiny(), &mut stream(3, &[])).unwrap();
        let batch = random_batch(2, 3, 4, 3, 9);
        assert!(matches!(forward(&m, &batch), Err(Error::Shape(_))));
    }

    #[test]
    fn uniform_labels_and_logits_zero_head_gradient() {
        let mut m = VitModel::new(tiny(), &mut stream(4, &[])).unwrap();
        let head = m.blocks().len() - 2;
        m.blocks_mut()[head].value.fill(0.0);
        let mut batch = random_batch(3, 2, 4, 3, 10);
        batch.labels.fill(1.0 / 3.0);
        let (_, cache) = forward(&m, &batch).unwrap();
        loss_and_backward(&mut m, &batch, &cache).unwrap();
        assert!(m.blocks()[head].grad.max_abs() < 1e-15);
    }

    #[test]
    fn stale_cache_is_detected() {
        let mut m = VitModel::new(tiny(), &mut stream(5, &[])).unwrap();
        let batch = random_batch(2, 2, 4, 3, 11);
        let other = random_batch(2, 2, 4, 3, 12);
        let (_, cache) = forward(&m, &batch).unwrap();
        assert_eq!(loss_and_backward(&mut m, &other, &cache), Err(Error::StaleCache));
        m.blocks_mut()[0].value[(0, 0)] += 1.0;
        assert_eq!(loss_and_backward(&mut m, &batch, &cache), Err(Error::StaleCache));
    }

    #[test]
    fn linear_gradients_are_sums_of_outer_products() {
        let mut m = VitModel::new(tiny(), &mut stream(6, &[])).unwrap();
        let batch = random_batch(1, 2, 4, 3, 13);
        let (_, cache) = forward(&m, &batch).unwrap();
        let mut deltas = Vec::new();
        backward_impl(&mut m, &batch, &cache, Some(&mut deltas)).unwrap();
        let lc = &cache.layers[0];
        let inputs = [
            (PATCH_W, &cache.patches),
            (STEM + QKV_W, &lc.h1),
            (STEM + PROJ_W, &lc.ctx),
            (STEM + FC1_W, &lc.h2),
            (STEM + FC2_W, &lc.act),
            (STEM + PER_LAYER + 2, &cache.pooled),
        ];
        assert_eq!(deltas.len(), inputs.len());
        for (idx, x) in inputs {
            let delta = &deltas.iter().find(|(i, _)| *i == idx).unwrap().1;
            let g = &m.blocks()[idx].grad;
            let mut want = Matrix::zeros(g.rows(), g.cols());
            for t in 0..x.rows() {
                for r in 0..g.rows() {
                    for c in 0..g.cols() {
                        want[(r, c)] += delta[(t, r)] * x[(t, c)];
                    }
                }
            }
            assert!(want.sub(g).unwrap().max_abs() < 1e-10, "{}", m.blocks()[idx].name);
        }
    }

    #[test]
    fn soft_cross_entropy_matches_direct_sum() {
        let z = Matrix::from_rows(&[[1.0, 2.0, 0.5], [0.0, -1.0, 3.0]]);
        let y = Matrix::from_rows(&[[0.2, 0.7, 0.1], [0.0, 0.0, 1.0]]);
        let (loss, dz) = soft_cross_entropy(&z, &y).unwrap();
        let mut want = 0.0;
        for i in 0..2 {
            let s: f64 = z.row(i).iter().map(|v| v.exp()).sum();
            for c in 0..3 {
                want -= y[(i, c)] * (z[(i, c)].exp() / s).ln();
            }
        }
        assert!((loss - want / 2.0).abs() < 1e-14);
        for i in 0..2 {
            assert!(dz.row(i).iter().sum::<f64>().abs() < 1e-15);
        }
    }
}
