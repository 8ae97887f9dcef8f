use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::{evaluate, forward, loss_and_backward, VitModel};
use crate::data::{load_batch, Dataset, Split};
use crate::error::{Error, Result};
use crate::optim::{cosine_lr, HybridOptimizer, DEFAULT_MIN_LR_RATIO};
use crate::param::ParamBlock;
use crate::recipes::{apply_recipe, RecipeConfig};
use crate::rng::stream;
use crate::spectral::{snapshot_from_matrix, BlockFamily, SnapshotKind, SnapshotMeta, SpectrumSnapshot};

const STREAM_PERM: u64 = 0x9E4D;
const STREAM_RECIPE: u64 = 0xA11C;

/// When and what to snapshot.
///
/// A gradient tap at step `s` records the minibatch gradient at the weights
/// reached after `s` updates (so `s = total_steps` is allowed and captures
/// the final weights). A momentum tap at step `s` records the momentum
/// formed during update `s`; there is none at `s = total_steps`.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TapSchedule {
    pub steps: Vec<u64>,
    /// Empty means all four backbone families.
    pub families: Vec<BlockFamily>,
    pub kinds: Vec<SnapshotKind>,
}

impl TapSchedule {
    pub fn none() -> Self {
        Self::default()
    }

    /// `count` steps spread evenly over `[0, total]`, both ends included.
    pub fn evenly_spaced(total: u64, count: usize, families: Vec<BlockFamily>, kinds: Vec<SnapshotKind>) -> Self {
        let mut steps: Vec<u64> = match count {
            0 => Vec::new(),
            1 => alloc::vec![total],
            _ => (0..count).map(|i| (i as u64 * total) / (count as u64 - 1)).collect(),
        };
        steps.dedup();
        Self { steps, families, kinds }
    }

    pub fn validate(&self, total_steps: u64) -> Result<()> {
        if self.steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("tap steps must be strictly increasing".into()));
        }
        if let Some(s) = self.steps.iter().find(|&&s| s > total_steps) {
            return Err(Error::Config(alloc::format!("tap step {s} beyond total_steps {total_steps}")));
        }
        if self.families.contains(&BlockFamily::Other) {
            return Err(Error::Config("only backbone families can be tapped".into()));
        }
        Ok(())
    }

    fn at(&self, step: u64) -> bool {
        self.steps.binary_search(&step).is_ok()
    }

    fn wants(&self, kind: SnapshotKind, block: &ParamBlock) -> bool {
        let fam = block.family.spectral_family();
        fam != BlockFamily::Other
            && !block.is_vector
            && self.kinds.contains(&kind)
            && (self.families.is_empty() || self.families.contains(&fam))
    }
}

/// Receives snapshots and metric rows as training proceeds.
pub trait SnapshotSink {
    fn record(&mut self, snapshot: SpectrumSnapshot) -> Result<()>;

    fn on_metrics(&mut self, _row: &MetricRow) {}
}

/// Keeps everything in memory.
#[derive(Clone, Debug, Default)]
pub struct MemorySink {
    pub snapshots: Vec<SpectrumSnapshot>,
}

impl SnapshotSink for MemorySink {
    fn record(&mut self, snapshot: SpectrumSnapshot) -> Result<()> {
        self.snapshots.push(snapshot);
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub run_id: String,
    pub seed: u64,
    pub total_steps: u64,
    pub batch_size: usize,
    /// Evaluate every this many steps (0 disables intermediate evaluations).
    pub eval_every: u64,
    pub eval_chunk: usize,
    pub min_lr_ratio: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            run_id: "run".into(),
            seed: 0,
            total_steps: 1000,
            batch_size: 64,
            eval_every: 250,
            eval_chunk: 256,
            min_lr_ratio: DEFAULT_MIN_LR_RATIO,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricRow {
    pub step: u64,
    /// Mean training loss over the steps since the previous row.
    pub train_loss: Option<f64>,
    pub val_loss: f64,
    pub top1: f64,
    pub macro_top1: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum RunStatus {
    Completed,
    Diverged,
    Aborted,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Completed => "completed",
            RunStatus::Diverged => "diverged",
            RunStatus::Aborted => "aborted",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub metrics: Vec<MetricRow>,
    pub status: RunStatus,
    pub steps_completed: u64,
    pub snapshots: usize,
    /// Step and message of the failure, if any.
    pub failure: Option<(u64, String)>,
}

struct Batcher {
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    cursor: usize,
    len: usize,
}

impl Batcher {
    fn new(seed: u64, len: usize) -> Self {
        let mut b = Self {
            seed,
            epoch: 0,
            order: Vec::new(),
            cursor: 0,
            len,
        };
        b.reshuffle();
        b
    }

    fn reshuffle(&mut self) {
        self.order = (0..self.len).collect();
        self.order.shuffle(&mut stream(self.seed, &[STREAM_PERM, self.epoch]));
        self.cursor = 0;
    }

    /// Next `n` positions; a partial tail of an epoch is dropped.
    fn next(&mut self, n: usize) -> Vec<usize> {
        if self.cursor + n > self.len {
            self.epoch += 1;
            self.reshuffle();
        }
        let out = self.order[self.cursor..self.cursor + n].to_vec();
        self.cursor += n;
        out
    }
}

fn meta(cfg: &TrainConfig, step: u64, block: &ParamBlock, kind: SnapshotKind) -> SnapshotMeta {
    SnapshotMeta {
        run_id: cfg.run_id.clone(),
        step,
        family: block.family.spectral_family(),
        depth: block.depth,
        kind,
    }
}

/// Train `model` in place. Each step draws a batch from a per-epoch
/// permutation of the training split, applies the recipe, back-propagates,
/// takes tapped gradient snapshots, and updates through `opt` with a cosine
/// schedule on both learning rates.
///
/// A non-finite loss or a numerical failure inside the optimizer ends the
/// run with [`RunStatus::Diverged`]; other errors are returned.
pub fn train(
    model: &mut VitModel,
    data: &Dataset,
    recipe: &RecipeConfig,
    opt: &mut HybridOptimizer,
    tap: &TapSchedule,
    cfg: &TrainConfig,
    sink: &mut dyn SnapshotSink,
) -> Result<TrainReport> {
    recipe.validate()?;
    tap.validate(cfg.total_steps)?;
    if cfg.batch_size < 2 {
        return Err(Error::BatchSize(cfg.batch_size));
    }
    let train_len = data.split(Split::Train).len();
    if cfg.batch_size > train_len {
        return Err(Error::Config(alloc::format!(
            "batch size {} exceeds training split of {train_len}",
            cfg.batch_size
        )));
    }
    let mcfg = model.config();
    if mcfg.num_classes != data.spec.num_classes
        || mcfg.channels != data.spec.channels
        || mcfg.image_size != data.spec.image_size
    {
        return Err(Error::Config("model and dataset shapes disagree".into()));
    }

    let val_targets = data.targets(Split::Val);
    let val_idx: Vec<usize> = (0..val_targets.len()).collect();
    let val = load_batch(data, Split::Val, &val_idx, true)?;
    let mut report = TrainReport {
        metrics: Vec::new(),
        status: RunStatus::Completed,
        steps_completed: 0,
        snapshots: 0,
        failure: None,
    };
    let push_row = |report: &mut TrainReport, sink: &mut dyn SnapshotSink, model: &VitModel, step, losses: &mut Vec<f64>| -> Result<()> {
        let m = evaluate(model, &val, &val_targets, cfg.eval_chunk)?;
        let train_loss = (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64);
        losses.clear();
        let row = MetricRow {
            step,
            train_loss,
            val_loss: m.loss,
            top1: m.top1,
            macro_top1: m.macro_top1,
        };
        sink.on_metrics(&row);
        report.metrics.push(row);
        Ok(())
    };

    let mut losses = Vec::new();
    push_row(&mut report, sink, model, 0, &mut losses)?;
    let mut batcher = Batcher::new(cfg.seed, train_len);
    let last = if tap.steps.last() == Some(&cfg.total_steps) && tap.kinds.contains(&SnapshotKind::Gradient) {
        cfg.total_steps + 1
    } else {
        cfg.total_steps
    };
    for t in 0..last {
        let idx = batcher.next(cfg.batch_size);
        let raw = load_batch(data, Split::Train, &idx, true)?;
        let batch = apply_recipe(&raw, recipe, &mut stream(cfg.seed, &[STREAM_RECIPE, t]))?;
        let (_, cache) = forward(model, &batch)?;
        let loss = loss_and_backward(model, &batch, &cache)?;
        if !loss.is_finite() {
            report.status = RunStatus::Diverged;
            report.failure = Some((t, alloc::format!("non-finite training loss {loss}")));
            break;
        }
        let tapped = tap.at(t);
        if tapped {
            for b in model.blocks() {
                if tap.wants(SnapshotKind::Gradient, b) {
                    sink.record(snapshot_from_matrix(&b.grad, meta(cfg, t, b, SnapshotKind::Gradient))?)?;
                    report.snapshots += 1;
                }
            }
        }
        if t == cfg.total_steps {
            break;
        }
        losses.push(loss);
        let lr_factor = cosine_lr(t, cfg.total_steps, 1.0, cfg.min_lr_ratio);
        let mut momenta: Vec<Result<SpectrumSnapshot>> = Vec::new();
        let step = opt.step_observed(model.blocks_mut(), lr_factor, |view| {
            if tapped && tap.wants(SnapshotKind::Momentum, view.block) {
                momenta.push(snapshot_from_matrix(view.momentum, meta(cfg, t, view.block, SnapshotKind::Momentum)));
            }
        });
        match step {
            Ok(()) => {}
            Err(e @ (Error::NonFinite(_) | Error::Divergence { .. })) => {
                report.status = RunStatus::Diverged;
                report.failure = Some((t, alloc::format!("{e}")));
                break;
            }
            Err(e) => return Err(e),
        }
        for s in momenta {
            sink.record(s?)?;
            report.snapshots += 1;
        }
        report.steps_completed = t + 1;
        let done = t + 1;
        if done == cfg.total_steps || (cfg.eval_every > 0 && done % cfg.eval_every == 0) {
            push_row(&mut report, sink, model, done, &mut losses)?;
        }
    }
    Ok(report)
}
