//! On-disk dataset directory.
//!
//! ```text
//! manifest.toml   spec echo, channel statistics, counts, format version
//! records.mlab    one f32 record per image, shape channels x (size*size)
//! labels.mlab     1 x N f64 class ids
//! split.csv       split,offset,class
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use muonlab_core::data::{class_histogram, ChannelStats, Dataset, DatasetSpec, Split, SplitIndex};
use muonlab_core::Matrix;
use serde::{Deserialize, Serialize};

use crate::binfmt::{encode_f32, encode_matrix, read_matrix_file, Decoder, Dtype, Payload};
use crate::error::{LabError, Result};

pub const MANIFEST: &str = "manifest.toml";
pub const RECORDS: &str = "records.mlab";
pub const LABELS: &str = "labels.mlab";
pub const SPLIT: &str = "split.csv";
pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Counts {
    pub records: usize,
    pub train: usize,
    pub val: usize,
    /// Training samples per class.
    pub per_class_train: Vec<usize>,
    pub head_tail_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub spec: DatasetSpec,
    pub stats: ChannelStats,
    pub counts: Counts,
}

impl Manifest {
    pub fn of(data: &Dataset) -> Self {
        Self {
            format_version: DATASET_FORMAT_VERSION,
            spec: data.spec.clone(),
            stats: data.stats.clone(),
            counts: Counts {
                records: data.len(),
                train: data.split(Split::Train).len(),
                val: data.split(Split::Val).len(),
                per_class_train: class_histogram(data),
                head_tail_ratio: data.head_tail_ratio(),
            },
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| LabError::io(path, e))
}

/// Write `data` into `dir`, which must not exist or be empty.
pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    if dir.exists() {
        let mut entries = fs::read_dir(dir).map_err(|e| LabError::io(dir, e))?;
        if entries.next().is_some() {
            return Err(LabError::Exists(dir.to_path_buf()));
        }
    }
    fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;

    let manifest = toml::to_string(&Manifest::of(data)).map_err(|e| LabError::config(dir, e.to_string()))?;
    write_file(&dir.join(MANIFEST), manifest.as_bytes())?;

    let (c, hw) = (data.spec.channels, data.spec.image_size * data.spec.image_size);
    let mut records = Vec::with_capacity(data.images.len() * 4 + data.len() * 17);
    for o in 0..data.len() {
        records.extend(encode_f32(c, hw, data.record(o))?);
    }
    write_file(&dir.join(RECORDS), &records)?;

    let labels = Matrix::from_fn(1, data.len(), |_, j| data.labels[j] as f64);
    write_file(&dir.join(LABELS), &encode_matrix(&labels, Dtype::F64)?)?;

    let mut split = String::from("split,offset,class\n");
    for (name, which) in [("train", Split::Train), ("val", Split::Val)] {
        for &(o, k) in data.split(which) {
            let _ = writeln!(split, "{name},{o},{k}");
        }
    }
    write_file(&dir.join(SPLIT), split.as_bytes())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| LabError::io(&path, e))?;
    let m: Manifest = toml::from_str(&text).map_err(|e| LabError::config(&path, e.to_string()))?;
    if m.format_version != DATASET_FORMAT_VERSION {
        return Err(LabError::config(&path, format!("unsupported dataset format version {}", m.format_version)));
    }
    m.spec.validate().map_err(|e| LabError::config(&path, e.to_string()))?;
    Ok(m)
}

fn parse_split(text: &str, path: &Path) -> Result<SplitIndex> {
    let mut split = SplitIndex::default();
    let mut lines = text.lines();
    if lines.next() != Some("split,offset,class") {
        return Err(LabError::config(path, "missing header `split,offset,class`"));
    }
    for (i, line) in lines.enumerate() {
        let bad = || LabError::config(path, format!("line {}: malformed entry `{line}`", i + 2));
        let mut parts = line.split(',');
        let (Some(name), Some(o), Some(k), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
            return Err(bad());
        };
        let entry = (o.parse().map_err(|_| bad())?, k.parse().map_err(|_| bad())?);
        match name {
            "train" => split.train.push(entry),
            "val" => split.val.push(entry),
            _ => return Err(bad()),
        }
    }
    Ok(split)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let spec = manifest.spec;
    let (c, hw) = (spec.channels, spec.image_size * spec.image_size);

    let path = dir.join(RECORDS);
    let bytes = fs::read(&path).map_err(|e| LabError::io(&path, e))?;
    let name = path.display().to_string();
    let mut dec = Decoder::new(name.clone(), &bytes);
    let mut images = Vec::with_capacity(manifest.counts.records * c * hw);
    while !dec.is_done() {
        let at = dec.offset() as u64;
        let rec = dec.next_record()?;
        let bad_shape = (rec.rows, rec.cols) != (c, hw);
        match rec.payload {
            Payload::F32(v) if !bad_shape => images.extend(v),
            _ => {
                return Err(LabError::Format {
                    path: name,
                    offset: at,
                    message: format!("expected an f32 {c}x{hw} image record"),
                })
            }
        }
    }

    let labels_m = read_matrix_file(&dir.join(LABELS))?;
    let labels: Vec<usize> = labels_m
        .data()
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(LabError::config(dir.join(LABELS), format!("label {v} is not a class id")))
            }
        })
        .collect::<Result<_>>()?;

    let split_path = dir.join(SPLIT);
    let text = fs::read_to_string(&split_path).map_err(|e| LabError::io(&split_path, e))?;
    let split = parse_split(&text, &split_path)?;

    let data = Dataset::from_parts(spec, images, labels, split, manifest.stats)?;
    if Manifest::of(&data).counts != manifest.counts {
        return Err(LabError::config(dir.join(MANIFEST), "recorded counts disagree with the stored records"));
    }
    Ok(data)
}
