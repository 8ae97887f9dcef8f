//! Run directories: `<root>/<name>-<hash8>/` holding the frozen config, the
//! run record, the snapshot store and the final checkpoint.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use muonlab_core::data::{generate, Dataset};
use muonlab_core::param::{ParamBlock, ParamFamily};
use muonlab_core::rng::stream;
use muonlab_core::spectral::{BlockFamily, SnapshotKind};
use muonlab_core::vit::{train, MetricRow, RunStatus, VitConfig, VitModel};
use serde::{Deserialize, Serialize};

use crate::binfmt::{read_matrix_file, write_matrix_file, Dtype};
use crate::config::{DatasetSource, RawRunConfig, RunConfig};
use crate::dataset_io::read_dataset;
use crate::error::{LabError, Result};
use crate::store::{SnapshotStore, StoreSink};

pub const RUN_ROOT_ENV: &str = "MUONLAB_RUN_ROOT";
pub const DEFAULT_RUN_ROOT: &str = "runs";
pub const CONFIG_FILE: &str = "config.toml";
pub const RECORD_FILE: &str = "record.toml";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SNAPSHOT_DIR: &str = "snapshots";
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const RECORD_FORMAT_VERSION: u32 = 1;

/// Augmentation order applied to every training batch.
pub const PIPELINE: &str = "randaugment > random_erasing > mixup_or_cutmix > label_smoothing";

const STREAM_INIT: u64 = 0x1417;

/// `MUONLAB_RUN_ROOT` if set, else `./runs`.
pub fn run_root() -> PathBuf {
    std::env::var_os(RUN_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_RUN_ROOT))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotIndexEntry {
    pub step: u64,
    pub family: BlockFamily,
    pub depth: usize,
    pub kind: SnapshotKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_seconds: f64,
    pub steps_per_second: f64,
    pub images_per_second: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub status: RunStatus,
    pub steps_completed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure_step: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub format_version: u32,
    pub run_id: String,
    pub pipeline: String,
    pub parameters: usize,
    pub outcome: Outcome,
    pub config: RawRunConfig,
    pub metrics: Vec<MetricRow>,
    pub snapshots: Vec<SnapshotIndexEntry>,
    /// Wall-clock fields; excluded from reproducibility comparisons.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing: Option<Timing>,
}

impl RunRecord {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run record serializes")
    }

    /// The record with wall-clock fields removed.
    pub fn without_timing(&self) -> Self {
        Self {
            timing: None,
            ..self.clone()
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(RECORD_FILE);
        let text = fs::read_to_string(&path).map_err(|e| LabError::io(&path, e))?;
        toml::from_str(&text).map_err(|e| LabError::config(&path, e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CheckpointEntry {
    name: String,
    family: ParamFamily,
    depth: usize,
    is_vector: bool,
    shape: [usize; 2],
    dtype: String,
    file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CheckpointManifest {
    model: VitConfig,
    blocks: Vec<CheckpointEntry>,
}

/// Write one `.mlab` file per block plus `manifest.toml`.
pub fn write_checkpoint(dir: &Path, model: &VitModel) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    let mut blocks = Vec::new();
    for (i, b) in model.blocks().iter().enumerate() {
        let file = format!("{i:03}-{}.mlab", b.name);
        write_matrix_file(&dir.join(&file), &b.value, Dtype::F64)?;
        let (r, c) = b.shape();
        blocks.push(CheckpointEntry {
            name: b.name.clone(),
            family: b.family,
            depth: b.depth,
            is_vector: b.is_vector,
            shape: [r, c],
            dtype: Dtype::F64.as_str().into(),
            file,
        });
    }
    let manifest = CheckpointManifest {
        model: model.config().clone(),
        blocks,
    };
    let path = dir.join("manifest.toml");
    let text = toml::to_string(&manifest).map_err(|e| LabError::config(&path, e.to_string()))?;
    fs::write(&path, text).map_err(|e| LabError::io(&path, e))
}

pub fn read_checkpoint(dir: &Path) -> Result<VitModel> {
    let path = dir.join("manifest.toml");
    let text = fs::read_to_string(&path).map_err(|e| LabError::io(&path, e))?;
    let manifest: CheckpointManifest = toml::from_str(&text).map_err(|e| LabError::config(&path, e.to_string()))?;
    let mut blocks = Vec::with_capacity(manifest.blocks.len());
    for e in &manifest.blocks {
        let value = read_matrix_file(&dir.join(&e.file))?;
        if value.shape() != (e.shape[0], e.shape[1]) {
            return Err(LabError::config(&path, format!("block `{}` has shape {:?}", e.name, value.shape())));
        }
        let mut b = ParamBlock::matrix(e.name.clone(), e.family, e.depth, value);
        b.is_vector = e.is_vector;
        blocks.push(b);
    }
    Ok(VitModel::from_blocks(manifest.model, blocks)?)
}

pub fn load_data(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.dataset {
        DatasetSource::Generated(spec) => Ok(generate(spec)?),
        DatasetSource::Path { dir, .. } => read_dataset(dir),
    }
}

/// Train `cfg` into a fresh directory under `root` and return it with the
/// record. An existing directory of the same name is never touched.
pub fn execute(cfg: &RunConfig, root: &Path) -> Result<(PathBuf, RunRecord)> {
    let dir = root.join(cfg.run_dir_name());
    if dir.exists() {
        return Err(LabError::Exists(dir));
    }
    let data = load_data(cfg)?;
    fs::create_dir_all(root).map_err(|e| LabError::io(root, e))?;
    fs::create_dir(&dir).map_err(|e| match e.kind() {
        std::io::ErrorKind::AlreadyExists => LabError::Exists(dir.clone()),
        _ => LabError::io(&dir, e),
    })?;
    let frozen = cfg.to_toml();
    fs::write(dir.join(CONFIG_FILE), &frozen).map_err(|e| LabError::io(dir.join(CONFIG_FILE), e))?;

    let mut model = VitModel::new(cfg.model.clone(), &mut stream(cfg.seed, &[STREAM_INIT]))?;
    let mut opt = cfg.optimizer.build()?;
    let mut sink = StoreSink::new(SnapshotStore::create(dir.join(SNAPSHOT_DIR))?);
    let tcfg = cfg.train_config();

    let start = Instant::now();
    let report = train(&mut model, &data, &cfg.recipe, &mut opt, &cfg.tap, &tcfg, &mut sink)?;
    let wall = start.elapsed().as_secs_f64();

    write_checkpoint(&dir.join(CHECKPOINT_DIR), &model)?;
    let per_sec = |n: f64| if wall > 0.0 { n / wall } else { 0.0 };
    let record = RunRecord {
        format_version: RECORD_FORMAT_VERSION,
        run_id: tcfg.run_id.clone(),
        pipeline: PIPELINE.into(),
        parameters: model.num_parameters(),
        outcome: Outcome {
            status: report.status,
            steps_completed: report.steps_completed,
            failure_step: report.failure.as_ref().map(|f| f.0),
            failure: report.failure.map(|f| f.1),
        },
        config: cfg.to_raw(),
        metrics: report.metrics,
        snapshots: sink
            .index
            .iter()
            .map(|&(step, family, depth, kind)| SnapshotIndexEntry {
                step,
                family,
                depth,
                kind,
            })
            .collect(),
        timing: Some(Timing {
            wall_seconds: wall,
            steps_per_second: per_sec(report.steps_completed as f64),
            images_per_second: per_sec((report.steps_completed * cfg.batch_size as u64) as f64),
        }),
    };
    let path = dir.join(RECORD_FILE);
    fs::write(&path, record.to_toml()).map_err(|e| LabError::io(&path, e))?;
    let path = dir.join(METRICS_FILE);
    fs::write(&path, metrics_csv(&record.metrics)).map_err(|e| LabError::io(&path, e))?;
    Ok((dir, record))
}

/// `step,train_loss,val_loss,top1,macro_top1`; the first row has no
/// training loss.
pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut s = String::from("step,train_loss,val_loss,top1,macro_top1\n");
    for r in rows {
        let train = r.train_loss.map(|v| v.to_string()).unwrap_or_default();
        s.push_str(&format!("{},{train},{},{},{}\n", r.step, r.val_loss, r.top1, r.macro_top1));
    }
    s
}

/// The snapshot store of a run directory, or `path` itself if it is a store.
pub fn snapshot_dir(path: &Path) -> PathBuf {
    let nested = path.join(SNAPSHOT_DIR);
    if nested.is_dir() {
        nested
    } else {
        path.to_path_buf()
    }
}
