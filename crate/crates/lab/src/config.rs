//! Run configuration documents.
//!
//! A config file is TOML. Every section may name a preset and override
//! individual keys; [`RunConfig::resolve`] turns it into a fully explicit
//! [`RunConfig`] whose serialization ([`RunConfig::to_toml`]) is the
//! canonical frozen form and is what the run hash is computed from.
//!
//! ```toml
//! name = "muon-full"
//! seed = 1
//! total_steps = 3000
//!
//! [dataset]
//! preset = "lt-mini"
//! image_size = 16
//!
//! [model]
//! preset = "echo"
//!
//! [recipe]
//! variant = "full"
//!
//! [optimizer]
//! preset = "muon-1e-3"
//!
//! [tap]
//! count = 7
//! families = ["qkv", "mlp_down"]
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use muonlab_core::data::{ClassCounts, DatasetSpec, Generator};
use muonlab_core::optim::{AdamWConfig, DispatchPolicy, HybridOptimizer, MuonConfig, OptimizerKind, DEFAULT_MIN_LR_RATIO};
use muonlab_core::recipes::{RecipeConfig, Variant};
use muonlab_core::spectral::{BlockFamily, SnapshotKind};
use muonlab_core::vit::{micro_config, TapSchedule, TrainConfig, VitConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset_io::read_manifest;
use crate::error::{LabError, Result};
use crate::schedules::bundled_schedule;

pub const CONFIG_VERSION: u32 = 1;

/// Learning-rate presets for the optimizer section.
pub const OPTIMIZER_PRESETS: [&str; 2] = ["muon-1e-3", "adamw-3e-4"];
pub const MODEL_PRESETS: [&str; 3] = ["desk", "echo", "micro"];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    /// Directory written by `generate`; excludes every other key.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub channels: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator: Option<Generator>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counts: Option<ClassCounts>,
}

impl DatasetSection {
    pub fn of_spec(spec: &DatasetSpec) -> Self {
        Self {
            preset: None,
            path: None,
            name: Some(spec.name.clone()),
            num_classes: Some(spec.num_classes),
            image_size: Some(spec.image_size),
            channels: Some(spec.channels),
            generator: Some(spec.generator),
            noise: Some(spec.noise),
            seed: Some(spec.seed),
            counts: Some(spec.counts),
        }
    }

    /// Preset (if any) with the explicit keys applied on top.
    pub fn to_spec(&self) -> std::result::Result<DatasetSpec, String> {
        if self.path.is_some() {
            return Err("`path` cannot be combined with a generated dataset spec".into());
        }
        let base = match &self.preset {
            Some(p) => Some(DatasetSpec::preset(p).ok_or_else(|| format!("unknown dataset preset `{p}`"))?),
            None => None,
        };
        fn pick<T: Clone>(v: &Option<T>, base: Option<T>, key: &str) -> std::result::Result<T, String> {
            v.clone().or(base).ok_or_else(|| format!("dataset key `{key}` is required without a preset"))
        }
        let b = base.as_ref();
        let spec = DatasetSpec {
            name: pick(&self.name, b.map(|s| s.name.clone()), "name")?,
            num_classes: pick(&self.num_classes, b.map(|s| s.num_classes), "num_classes")?,
            counts: pick(&self.counts, b.map(|s| s.counts), "counts")?,
            image_size: pick(&self.image_size, b.map(|s| s.image_size), "image_size")?,
            channels: pick(&self.channels, b.map(|s| s.channels), "channels")?,
            generator: pick(&self.generator, b.map(|s| s.generator), "generator")?,
            noise: pick(&self.noise, b.map(|s| s.noise), "noise")?,
            seed: pick(&self.seed, b.map(|s| s.seed), "seed")?,
        };
        spec.validate().map_err(|e| e.to_string())?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub channels: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embed_dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heads: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mlp_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
}

/// Architecture presets. Image size, channels and class count come from the
/// dataset unless set explicitly.
pub fn model_preset(name: &str) -> Option<VitConfig> {
    match name {
        "desk" => Some(VitConfig::default()),
        "echo" => Some(VitConfig {
            embed_dim: 32,
            depth: 4,
            heads: 2,
            ..VitConfig::default()
        }),
        "micro" => Some(micro_config()),
        _ => None,
    }
}

impl ModelSection {
    fn resolve(&self, data: &DatasetSpec) -> std::result::Result<VitConfig, String> {
        let name = self.preset.as_deref().unwrap_or("desk");
        let base = model_preset(name).ok_or_else(|| format!("unknown model preset `{name}`"))?;
        let cfg = VitConfig {
            image_size: self.image_size.unwrap_or(data.image_size),
            patch_size: self.patch_size.unwrap_or(base.patch_size),
            channels: self.channels.unwrap_or(data.channels),
            embed_dim: self.embed_dim.unwrap_or(base.embed_dim),
            depth: self.depth.unwrap_or(base.depth),
            heads: self.heads.unwrap_or(base.heads),
            mlp_ratio: self.mlp_ratio.unwrap_or(base.mlp_ratio),
            num_classes: self.num_classes.unwrap_or(data.num_classes),
        };
        cfg.validate().map_err(|e| e.to_string())?;
        if (cfg.image_size, cfg.channels, cfg.num_classes) != (data.image_size, data.channels, data.num_classes) {
            return Err(format!(
                "model expects {}x{} images with {} channels and {} classes, dataset has {}x{}, {} and {}",
                cfg.image_size,
                cfg.image_size,
                cfg.channels,
                cfg.num_classes,
                data.image_size,
                data.image_size,
                data.channels,
                data.num_classes
            ));
        }
        Ok(cfg)
    }

    fn of(cfg: &VitConfig) -> Self {
        Self {
            preset: None,
            image_size: Some(cfg.image_size),
            patch_size: Some(cfg.patch_size),
            channels: Some(cfg.channels),
            embed_dim: Some(cfg.embed_dim),
            depth: Some(cfg.depth),
            heads: Some(cfg.heads),
            mlp_ratio: Some(cfg.mlp_ratio),
            num_classes: Some(cfg.num_classes),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecipeSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variant: Option<Variant>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mixup_alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cutmix_alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mix_prob: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub switch_prob: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_smoothing: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub randaug_ops: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub randaug_magnitude: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub erase_prob: Option<f64>,
}

impl RecipeSection {
    fn resolve(&self) -> std::result::Result<RecipeConfig, String> {
        let base = RecipeConfig::preset(self.variant.unwrap_or(Variant::Full));
        let cfg = RecipeConfig {
            variant: base.variant,
            mixup_alpha: self.mixup_alpha.unwrap_or(base.mixup_alpha),
            cutmix_alpha: self.cutmix_alpha.unwrap_or(base.cutmix_alpha),
            mix_prob: self.mix_prob.unwrap_or(base.mix_prob),
            switch_prob: self.switch_prob.unwrap_or(base.switch_prob),
            label_smoothing: self.label_smoothing.unwrap_or(base.label_smoothing),
            randaug_ops: self.randaug_ops.unwrap_or(base.randaug_ops),
            randaug_magnitude: self.randaug_magnitude.unwrap_or(base.randaug_magnitude),
            erase_prob: self.erase_prob.unwrap_or(base.erase_prob),
        };
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }

    fn of(c: &RecipeConfig) -> Self {
        Self {
            variant: Some(c.variant),
            mixup_alpha: Some(c.mixup_alpha),
            cutmix_alpha: Some(c.cutmix_alpha),
            mix_prob: Some(c.mix_prob),
            switch_prob: Some(c.switch_prob),
            label_smoothing: Some(c.label_smoothing),
            randaug_ops: Some(c.randaug_ops),
            randaug_magnitude: Some(c.randaug_magnitude),
            erase_prob: Some(c.erase_prob),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MuonSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rms_scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<f64>,
    /// Name of a bundled Newton-Schulz schedule.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ns_schedule: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub betas: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<f64>,
}

/// `[optimizer]`: the run's optimizer choice plus the settings of the matrix
/// rule (`[optimizer.muon]`) and of the AdamW group (`[optimizer.adamw]`).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerKind>,
    /// Routing of matrix blocks when the optimizer is not AdamW.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy: Option<DispatchPolicy>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub muon: Option<MuonSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adamw: Option<AdamWSection>,
}

/// Fully resolved optimizer settings.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub optimizer: OptimizerKind,
    pub policy: DispatchPolicy,
    pub muon: MuonConfig,
    pub adamw: AdamWConfig,
}

impl OptimizerConfig {
    pub fn build(&self) -> muonlab_core::Result<HybridOptimizer> {
        let (policy, rule) = self.optimizer.plan(self.policy);
        HybridOptimizer::new(policy, rule, self.muon.clone(), self.adamw.clone())
    }
}

impl OptimizerSection {
    fn resolve(&self) -> std::result::Result<OptimizerConfig, String> {
        let (mut kind, mut muon, mut adamw) = (None, MuonConfig::default(), AdamWConfig::default());
        match self.preset.as_deref() {
            None => {}
            Some("muon-1e-3") => {
                kind = Some(OptimizerKind::Muon);
                muon.lr = 1e-3;
            }
            Some("adamw-3e-4") => {
                kind = Some(OptimizerKind::AdamW);
                adamw.lr = 3e-4;
            }
            Some(p) => {
                return Err(format!(
                    "unknown optimizer preset `{p}` (known: {})",
                    OPTIMIZER_PRESETS.join(", ")
                ))
            }
        }
        let optimizer = self
            .optimizer
            .or(kind)
            .ok_or("optimizer section needs `optimizer` or a preset")?;
        if let Some(m) = &self.muon {
            muon.lr = m.lr.unwrap_or(muon.lr);
            muon.beta = m.beta.unwrap_or(muon.beta);
            muon.rms_scale = m.rms_scale.unwrap_or(muon.rms_scale);
            muon.weight_decay = m.weight_decay.unwrap_or(muon.weight_decay);
            if let Some(name) = &m.ns_schedule {
                muon.schedule = bundled_schedule(name).map_err(|e| e.to_string())?;
            }
        }
        if let Some(a) = &self.adamw {
            adamw.lr = a.lr.unwrap_or(adamw.lr);
            if let Some([b1, b2]) = a.betas {
                adamw.beta1 = b1;
                adamw.beta2 = b2;
            }
            adamw.eps = a.eps.unwrap_or(adamw.eps);
            adamw.weight_decay = a.weight_decay.unwrap_or(adamw.weight_decay);
        }
        muon.validate().map_err(|e| e.to_string())?;
        adamw.validate().map_err(|e| e.to_string())?;
        Ok(OptimizerConfig {
            optimizer,
            policy: self.policy.unwrap_or(DispatchPolicy::MatrixToMuon),
            muon,
            adamw,
        })
    }

    fn of(c: &OptimizerConfig) -> Self {
        Self {
            preset: None,
            optimizer: Some(c.optimizer),
            policy: Some(c.policy),
            muon: Some(MuonSection {
                lr: Some(c.muon.lr),
                beta: Some(c.muon.beta),
                rms_scale: Some(c.muon.rms_scale),
                weight_decay: Some(c.muon.weight_decay),
                ns_schedule: Some(c.muon.schedule.name().to_string()),
            }),
            adamw: Some(AdamWSection {
                lr: Some(c.adamw.lr),
                betas: Some([c.adamw.beta1, c.adamw.beta2]),
                eps: Some(c.adamw.eps),
                weight_decay: Some(c.adamw.weight_decay),
            }),
        }
    }
}

/// `[tap]`: explicit `steps`, or `count` steps spread evenly over the run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TapSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<Vec<u64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub families: Option<Vec<BlockFamily>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kinds: Option<Vec<SnapshotKind>>,
}

impl TapSection {
    fn resolve(&self, total: u64) -> std::result::Result<TapSchedule, String> {
        let families = self.families.clone().unwrap_or_default();
        let kinds = self
            .kinds
            .clone()
            .unwrap_or_else(|| vec![SnapshotKind::Gradient, SnapshotKind::Momentum]);
        let tap = match (&self.steps, self.count) {
            (Some(_), Some(_)) => return Err("tap takes `steps` or `count`, not both".into()),
            (Some(steps), None) => TapSchedule {
                steps: steps.clone(),
                families,
                kinds,
            },
            (None, count) => TapSchedule::evenly_spaced(total, count.unwrap_or(0), families, kinds),
        };
        tap.validate(total).map_err(|e| e.to_string())?;
        Ok(tap)
    }

    fn of(t: &TapSchedule) -> Self {
        Self {
            steps: Some(t.steps.clone()),
            count: None,
            families: Some(t.families.clone()),
            kinds: Some(t.kinds.clone()),
        }
    }
}

/// The document as written, before presets are expanded.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawRunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub version: Option<u32>,
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_steps: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_every: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_chunk: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_lr_ratio: Option<f64>,
    pub dataset: DatasetSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recipe: Option<RecipeSection>,
    pub optimizer: OptimizerSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tap: Option<TapSection>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSource {
    Generated(DatasetSpec),
    Path { dir: PathBuf, spec: DatasetSpec },
}

impl DatasetSource {
    pub fn spec(&self) -> &DatasetSpec {
        match self {
            DatasetSource::Generated(s) | DatasetSource::Path { spec: s, .. } => s,
        }
    }
}

/// A fully resolved run configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub name: String,
    pub seed: u64,
    pub total_steps: u64,
    pub batch_size: usize,
    pub eval_every: u64,
    pub eval_chunk: usize,
    pub min_lr_ratio: f64,
    pub dataset: DatasetSource,
    pub model: VitConfig,
    pub recipe: RecipeConfig,
    pub optimizer: OptimizerConfig,
    pub tap: TapSchedule,
}

impl RunConfig {
    /// Parse and resolve a document. `origin` names it in errors; relative
    /// dataset paths are taken relative to `base`.
    pub fn parse(text: &str, origin: &Path, base: &Path) -> Result<Self> {
        let raw: RawRunConfig = toml::from_str(text).map_err(|e| LabError::config(origin, e.to_string()))?;
        Self::resolve(&raw, base).map_err(|m| LabError::config(origin, m))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, path, base)
    }

    pub fn resolve(raw: &RawRunConfig, base: &Path) -> std::result::Result<Self, String> {
        if let Some(v) = raw.version {
            if v != CONFIG_VERSION {
                return Err(format!("unsupported config version {v}"));
            }
        }
        if raw.name.is_empty() || !raw.name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
            return Err(format!("run name `{}` must be non-empty and use only [A-Za-z0-9._-]", raw.name));
        }
        let dataset = match &raw.dataset.path {
            Some(p) => {
                if raw.dataset != (DatasetSection { path: Some(p.clone()), ..Default::default() }) {
                    return Err("dataset `path` excludes every other dataset key".into());
                }
                let dir = base.join(p);
                let spec = read_manifest(&dir).map_err(|e| e.to_string())?.spec;
                DatasetSource::Path { dir, spec }
            }
            None => DatasetSource::Generated(raw.dataset.to_spec()?),
        };
        let total_steps = raw.total_steps.unwrap_or(1000);
        let batch_size = raw.batch_size.unwrap_or(64);
        if batch_size < 2 {
            return Err(format!("batch_size {batch_size} must be at least 2"));
        }
        let min_lr_ratio = raw.min_lr_ratio.unwrap_or(DEFAULT_MIN_LR_RATIO);
        if !(0.0..=1.0).contains(&min_lr_ratio) {
            return Err(format!("min_lr_ratio {min_lr_ratio} outside [0, 1]"));
        }
        Ok(Self {
            name: raw.name.clone(),
            seed: raw.seed.unwrap_or(0),
            total_steps,
            batch_size,
            eval_every: raw.eval_every.unwrap_or(250),
            eval_chunk: raw.eval_chunk.unwrap_or(256).max(1),
            min_lr_ratio,
            model: raw.model.clone().unwrap_or_default().resolve(dataset.spec())?,
            dataset,
            recipe: raw.recipe.clone().unwrap_or_default().resolve()?,
            optimizer: raw.optimizer.resolve()?,
            tap: raw.tap.clone().unwrap_or_default().resolve(total_steps)?,
        })
    }

    /// The explicit document this config resolves from.
    pub fn to_raw(&self) -> RawRunConfig {
        RawRunConfig {
            version: Some(CONFIG_VERSION),
            name: self.name.clone(),
            seed: Some(self.seed),
            total_steps: Some(self.total_steps),
            batch_size: Some(self.batch_size),
            eval_every: Some(self.eval_every),
            eval_chunk: Some(self.eval_chunk),
            min_lr_ratio: Some(self.min_lr_ratio),
            dataset: match &self.dataset {
                DatasetSource::Generated(spec) => DatasetSection::of_spec(spec),
                DatasetSource::Path { dir, .. } => DatasetSection {
                    path: Some(dir.clone()),
                    ..Default::default()
                },
            },
            model: Some(ModelSection::of(&self.model)),
            recipe: Some(RecipeSection::of(&self.recipe)),
            optimizer: OptimizerSection::of(&self.optimizer),
            tap: Some(TapSection::of(&self.tap)),
        }
    }

    /// Canonical frozen form.
    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_raw()).expect("run config serializes")
    }

    /// First 8 hex digits of the SHA-256 of the frozen form.
    pub fn hash8(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        hex::encode(&digest[..4])
    }

    /// `<name>-<hash8>`.
    pub fn run_dir_name(&self) -> String {
        format!("{}-{}", self.name, self.hash8())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            run_id: self.run_dir_name(),
            seed: self.seed,
            total_steps: self.total_steps,
            batch_size: self.batch_size,
            eval_every: self.eval_every,
            eval_chunk: self.eval_chunk,
            min_lr_ratio: self.min_lr_ratio,
        }
    }
}
