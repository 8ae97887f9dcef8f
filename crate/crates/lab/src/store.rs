//! Append-only snapshot store: one file per record, each a metadata line
//! followed by the singular values as a `1 x r` f64 matrix record.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use muonlab_core::spectral::{BlockFamily, SnapshotKind, SnapshotMeta, SpectrumSnapshot};
use muonlab_core::vit::SnapshotSink;
use muonlab_core::Matrix;

use crate::binfmt::{encode_matrix, Decoder, Dtype};
use crate::error::{LabError, Result};

const EXT: &str = "snap";

pub fn format_meta(meta: &SnapshotMeta, r: usize) -> String {
    format!(
        "run_id={}\tstep={}\tfamily={}\tdepth={}\tkind={}\tr={}\n",
        meta.run_id, meta.step, meta.family, meta.depth, meta.kind, r
    )
}

fn parse_meta(line: &str, origin: &str) -> Result<(SnapshotMeta, usize)> {
    let bad = |m: String| LabError::Format {
        path: origin.to_string(),
        offset: 0,
        message: m,
    };
    let mut fields = std::collections::BTreeMap::new();
    for part in line.split('\t') {
        let (k, v) = part.split_once('=').ok_or_else(|| bad(format!("malformed field `{part}`")))?;
        fields.insert(k, v);
    }
    let get = |k: &str| fields.get(k).copied().ok_or_else(|| bad(format!("missing field `{k}`")));
    let num = |k: &str| -> Result<u64> { get(k)?.parse().map_err(|_| bad(format!("field `{k}` is not an integer"))) };
    let meta = SnapshotMeta {
        run_id: get("run_id")?.to_string(),
        step: num("step")?,
        family: get("family")?.parse().map_err(|e: muonlab_core::Error| bad(e.to_string()))?,
        depth: num("depth")? as usize,
        kind: get("kind")?.parse().map_err(|e: muonlab_core::Error| bad(e.to_string()))?,
    };
    Ok((meta, num("r")? as usize))
}

/// Encode one snapshot as a record file body.
pub fn encode_snapshot(s: &SpectrumSnapshot) -> Result<Vec<u8>> {
    let mut out = format_meta(&s.meta, s.sigma().len()).into_bytes();
    out.extend(encode_matrix(&Matrix::row_vector(s.sigma()), Dtype::F64)?);
    Ok(out)
}

pub fn decode_snapshot(bytes: &[u8], origin: &str) -> Result<SpectrumSnapshot> {
    let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| LabError::Format {
        path: origin.to_string(),
        offset: 0,
        message: "missing metadata line".into(),
    })?;
    let line = std::str::from_utf8(&bytes[..nl]).map_err(|_| LabError::Format {
        path: origin.to_string(),
        offset: 0,
        message: "metadata line is not UTF-8".into(),
    })?;
    let (meta, r) = parse_meta(line, origin)?;
    let start = nl + 1;
    let rec = Decoder::new(origin, &bytes[start..]).single().map_err(|e| match e {
        LabError::Format { path, offset, message } => LabError::Format {
            path,
            offset: offset + start as u64,
            message,
        },
        other => other,
    })?;
    let m = rec.into_matrix()?;
    if m.rows() != 1 || m.cols() != r {
        return Err(LabError::Format {
            path: origin.to_string(),
            offset: start as u64,
            message: format!("payload is {}x{}, metadata says 1x{r}", m.rows(), m.cols()),
        });
    }
    Ok(SpectrumSnapshot::new(meta, m.into_vec())?)
}

/// A directory of snapshot records. Records are never rewritten.
#[derive(Debug)]
pub struct SnapshotStore {
    dir: PathBuf,
    next: usize,
}

impl SnapshotStore {
    /// Open or create the directory.
    pub fn create(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| LabError::io(&dir, e))?;
        let next = Self::record_paths(&dir)?.len();
        Ok(Self { dir, next })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn record_paths(dir: &Path) -> Result<Vec<PathBuf>> {
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| LabError::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == EXT))
            .collect();
        paths.sort();
        Ok(paths)
    }

    pub fn append(&mut self, s: &SpectrumSnapshot) -> Result<PathBuf> {
        if s.meta.run_id.chars().any(|c| c.is_whitespace() || c == '=') {
            return Err(LabError::Usage(format!("run id `{}` may not contain whitespace or `=`", s.meta.run_id)));
        }
        let path = self.dir.join(format!("{:08}.{EXT}", self.next));
        let mut f = fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| LabError::io(&path, e))?;
        f.write_all(&encode_snapshot(s)?).map_err(|e| LabError::io(&path, e))?;
        self.next += 1;
        Ok(path)
    }

    pub fn len(&self) -> usize {
        self.next
    }

    pub fn is_empty(&self) -> bool {
        self.next == 0
    }

    /// All records in append order.
    pub fn load(dir: &Path) -> Result<Vec<SpectrumSnapshot>> {
        if !dir.is_dir() {
            return Err(LabError::io(dir, std::io::Error::new(std::io::ErrorKind::NotFound, "snapshot store not found")));
        }
        Self::record_paths(dir)?
            .iter()
            .map(|p| {
                let bytes = fs::read(p).map_err(|e| LabError::io(p, e))?;
                decode_snapshot(&bytes, &p.display().to_string())
            })
            .collect()
    }
}

/// Forwards training snapshots into a store and keeps a compact index.
pub struct StoreSink {
    pub store: SnapshotStore,
    pub index: Vec<(u64, BlockFamily, usize, SnapshotKind)>,
}

impl StoreSink {
    pub fn new(store: SnapshotStore) -> Self {
        Self { store, index: Vec::new() }
    }
}

impl SnapshotSink for StoreSink {
    fn record(&mut self, snapshot: SpectrumSnapshot) -> muonlab_core::Result<()> {
        self.store
            .append(&snapshot)
            .map_err(|e| muonlab_core::Error::Config(format!("snapshot store: {e}")))?;
        let m = &snapshot.meta;
        self.index.push((m.step, m.family, m.depth, m.kind));
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snap(step: u64, sigma: Vec<f64>) -> SpectrumSnapshot {
        SpectrumSnapshot::new(
            SnapshotMeta {
                run_id: "r1".into(),
                step,
                family: BlockFamily::MlpDown,
                depth: 2,
                kind: SnapshotKind::Gradient,
            },
            sigma,
        )
        .unwrap()
    }

    #[test]
    fn append_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = SnapshotStore::create(dir.path()).unwrap();
        let a = snap(0, vec![3.0, 1.0]);
        let b = snap(5, vec![2.0, 2.0, 0.5]);
        store.append(&a).unwrap();
        store.append(&b).unwrap();
        assert_eq!(SnapshotStore::load(dir.path()).unwrap(), vec![a.clone(), b]);
        // Reopening continues numbering instead of overwriting.
        let mut again = SnapshotStore::create(dir.path()).unwrap();
        again.append(&a).unwrap();
        assert_eq!(SnapshotStore::load(dir.path()).unwrap().len(), 3);
    }

    #[test]
    fn metadata_line_round_trips() {
        let s = snap(7, vec![1.0]);
        let bytes = encode_snapshot(&s).unwrap();
        assert!(bytes.starts_with(b"run_id=r1\tstep=7\tfamily=mlp_down\tdepth=2\tkind=gradient\tr=1\n"));
        assert_eq!(decode_snapshot(&bytes, "x").unwrap(), s);
    }

    #[test]
    fn corrupt_payload_reports_offset_past_metadata() {
        let s = snap(7, vec![1.0, 0.5]);
        let mut bytes = encode_snapshot(&s).unwrap();
        let nl = bytes.iter().position(|&b| b == b'\n').unwrap();
        bytes[nl + 1] = b'Z';
        match decode_snapshot(&bytes, "x") {
            Err(LabError::Format { offset, .. }) => assert_eq!(offset, nl as u64 + 1),
            other => panic!("{other:?}"),
        }
    }
}
