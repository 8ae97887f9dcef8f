//! Command-line interface.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use muonlab_core::data::generate;
use muonlab_core::spectral::{
    curve_summary, rank_ratio_atlas, select_snapshots, snapshot_from_matrix, uniform_grid, AtlasReport, BlockFamily,
    SnapshotFilter, SnapshotKind, SnapshotMeta, DEFAULT_ENERGY_QUANTILE,
};
use muonlab_core::vit::RunStatus;
use serde::Serialize;

use crate::binfmt::read_matrix_file;
use crate::config::{DatasetSection, RunConfig};
use crate::dataset_io::write_dataset;
use crate::error::{LabError, Result};
use crate::run::{execute, run_root, snapshot_dir, RUN_ROOT_ENV};
use crate::schedules::{bundled_schedule, load_schedule_file};
use crate::store::SnapshotStore;
use crate::verify::{run_suite, Suite, VerifyOptions};

/// Exit code of a run that finished with a diverged status.
pub const EXIT_DIVERGED: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "muonlab", version, about = "Gradient-spectrum experiments with Muon and AdamW")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset directory from a spec file.
    Generate {
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one run; the run directory is printed on success.
    Train {
        config: PathBuf,
        #[arg(long, env = RUN_ROOT_ENV)]
        run_root: Option<PathBuf>,
    },
    /// Energy-quantile rank ratios of run A over run B.
    Atlas {
        run_a: PathBuf,
        run_b: PathBuf,
        #[arg(long, default_value_t = DEFAULT_ENERGY_QUANTILE)]
        p: f64,
        #[command(flatten)]
        filter: FilterArgs,
        #[arg(long)]
        out: PathBuf,
        /// Also write a grayscale raster of log2 ratios.
        #[arg(long)]
        pgm: Option<PathBuf>,
    },
    /// Median and quartile cumulative-energy curves per run.
    Curves {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Column-group labels, one per run (default: directory names).
        #[arg(long = "label")]
        labels: Vec<String>,
        #[command(flatten)]
        filter: FilterArgs,
        /// Number of grid points in (0, 1].
        #[arg(long, default_value_t = 100)]
        grid: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run self-check suites; exits 2 if any contract is violated.
    Verify {
        #[arg(long, default_value = "all")]
        suite: String,
        /// Newton-Schulz schedule for the polar suite.
        #[arg(long, default_value = "standard")]
        schedule: String,
        /// Schedule file to look `--schedule` up in instead of the bundled one.
        #[arg(long)]
        schedule_file: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        matrices: usize,
        /// Write the report here as well as to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Turn gradient matrices in MLAB format into store records.
    ImportGrad {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        run_id: String,
        #[arg(long)]
        step: u64,
        /// Step increment between consecutive files.
        #[arg(long, default_value_t = 0)]
        step_stride: u64,
        #[arg(long)]
        family: BlockFamily,
        #[arg(long)]
        depth: usize,
        #[arg(long, default_value = "gradient")]
        kind: SnapshotKind,
    },
}

#[derive(Debug, Clone, Args)]
pub struct FilterArgs {
    #[arg(long)]
    pub family: Option<BlockFamily>,
    #[arg(long, default_value = "gradient")]
    pub kind: SnapshotKind,
    /// Inclusive depth range `lo:hi`, or a single depth.
    #[arg(long, value_parser = parse_range::<usize>)]
    pub depth: Option<(usize, usize)>,
    /// Inclusive step range `lo:hi`, or a single step.
    #[arg(long, value_parser = parse_range::<u64>)]
    pub steps: Option<(u64, u64)>,
}

impl FilterArgs {
    pub fn to_filter(&self) -> SnapshotFilter {
        SnapshotFilter {
            run_id: None,
            family: self.family,
            kind: Some(self.kind),
            depth: self.depth,
            step: self.steps,
        }
    }
}

fn parse_range<T: std::str::FromStr + Copy>(s: &str) -> std::result::Result<(T, T), String> {
    let p = |x: &str| x.trim().parse::<T>().map_err(|_| format!("`{x}` is not a valid bound"));
    match s.split_once(':') {
        Some((lo, hi)) => Ok((p(lo)?, p(hi)?)),
        None => {
            let v = p(s)?;
            Ok((v, v))
        }
    }
}

/// What a successful command reports.
#[derive(Debug)]
pub enum Outcome {
    Done(String),
    Diverged(String),
    VerifyFailed(String),
}

impl Outcome {
    pub fn exit_code(&self) -> u8 {
        match self {
            Outcome::Done(_) => 0,
            Outcome::Diverged(_) => EXIT_DIVERGED,
            Outcome::VerifyFailed(_) => 2,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Outcome::Done(m) | Outcome::Diverged(m) | Outcome::VerifyFailed(m) => m,
        }
    }
}

pub fn cmd_generate(spec: &Path, out: &Path) -> Result<PathBuf> {
    let text = fs::read_to_string(spec).map_err(|e| LabError::io(spec, e))?;
    let section: DatasetSection = toml::from_str(&text).map_err(|e| LabError::config(spec, e.to_string()))?;
    let spec_v = section.to_spec().map_err(|m| LabError::config(spec, m))?;
    write_dataset(out, &generate(&spec_v)?)?;
    Ok(out.to_path_buf())
}

pub fn cmd_train(config: &Path, root: &Path) -> Result<Outcome> {
    let cfg = RunConfig::load(config)?;
    let (dir, record) = execute(&cfg, root)?;
    let msg = dir.display().to_string();
    Ok(match record.outcome.status {
        RunStatus::Completed => Outcome::Done(msg),
        _ => Outcome::Diverged(format!(
            "{msg}: run {} at step {}: {}",
            record.outcome.status.as_str(),
            record.outcome.failure_step.unwrap_or(record.outcome.steps_completed),
            record.outcome.failure.as_deref().unwrap_or("no detail")
        )),
    })
}

fn load_filtered(path: &Path, filter: &SnapshotFilter) -> Result<Vec<muonlab_core::spectral::SpectrumSnapshot>> {
    let all = SnapshotStore::load(&snapshot_dir(path))?;
    Ok(select_snapshots(&all, filter).into_iter().cloned().collect())
}

pub fn atlas(run_a: &Path, run_b: &Path, p: f64, filter: &SnapshotFilter) -> Result<AtlasReport> {
    let a = load_filtered(run_a, filter)?;
    let b = load_filtered(run_b, filter)?;
    Ok(rank_ratio_atlas(&a, &b, p)?)
}

pub fn atlas_csv(report: &AtlasReport) -> String {
    let mut s = String::from("family,depth,step,ratio,p\n");
    for c in &report.cells {
        let _ = writeln!(s, "{},{},{},{},{}", c.family, c.depth, c.step, c.ratio, report.p);
    }
    s
}

#[derive(Debug, Serialize)]
struct RasterMeta {
    p: f64,
    encoding: String,
    log2_min: f64,
    log2_max: f64,
    missing_value: u8,
    rows: Vec<String>,
    steps: Vec<u64>,
}

/// Binary PGM with one row per (family, depth) and one column per step.
/// Grey level `255 · (log₂ r − lo) / (hi − lo)` on `[lo, hi] = [−B, B]`,
/// `B = max(1, ⌈max |log₂ r|⌉)`; absent cells are 0.
pub fn atlas_pgm(report: &AtlasReport) -> (Vec<u8>, String) {
    let mut rows: Vec<(BlockFamily, usize)> = report.cells.iter().map(|c| (c.family, c.depth)).collect();
    rows.sort();
    rows.dedup();
    let mut steps: Vec<u64> = report.cells.iter().map(|c| c.step).collect();
    steps.sort();
    steps.dedup();
    let bound = report
        .cells
        .iter()
        .map(|c| c.ratio.log2().abs())
        .filter(|v| v.is_finite())
        .fold(1.0f64, f64::max)
        .ceil();
    let mut pixels = vec![0u8; rows.len() * steps.len()];
    for c in &report.cells {
        let r = rows.binary_search(&(c.family, c.depth)).expect("row");
        let k = steps.binary_search(&c.step).expect("step");
        let l = c.ratio.log2().clamp(-bound, bound);
        pixels[r * steps.len() + k] = (255.0 * (l + bound) / (2.0 * bound)).round() as u8;
    }
    let mut out = format!("P5\n{} {}\n255\n", steps.len(), rows.len()).into_bytes();
    out.extend(pixels);
    let meta = RasterMeta {
        p: report.p,
        encoding: "grey = 255 * (log2(ratio) - log2_min) / (log2_max - log2_min), clamped".into(),
        log2_min: -bound,
        log2_max: bound,
        missing_value: 0,
        rows: rows.iter().map(|(f, d)| format!("{f}/{d}")).collect(),
        steps,
    };
    (out, toml::to_string(&meta).expect("raster metadata serializes"))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| LabError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| LabError::io(path, e))
}

pub fn cmd_atlas(
    run_a: &Path,
    run_b: &Path,
    p: f64,
    filter: &SnapshotFilter,
    out: &Path,
    pgm: Option<&Path>,
) -> Result<String> {
    let report = atlas(run_a, run_b, p, filter)?;
    write(out, atlas_csv(&report))?;
    if let Some(path) = pgm {
        let (raster, meta) = atlas_pgm(&report);
        write(path, raster)?;
        let mut side = path.as_os_str().to_owned();
        side.push(".toml");
        write(Path::new(&side), meta)?;
    }
    let o = &report.omissions;
    Ok(format!(
        "{} cells; omitted {} only in A, {} only in B, quarantined {} / {}",
        report.cells.len(),
        o.only_in_a,
        o.only_in_b,
        o.quarantined_a,
        o.quarantined_b
    ))
}

pub fn curves_csv(runs: &[(String, PathBuf)], filter: &SnapshotFilter, grid_n: usize) -> Result<String> {
    if grid_n == 0 {
        return Err(LabError::Usage("grid must have at least one point".into()));
    }
    let grid = uniform_grid(grid_n);
    let mut summaries = Vec::new();
    for (_, path) in runs {
        let snaps = load_filtered(path, filter)?;
        let refs: Vec<_> = snaps.iter().collect();
        summaries.push(curve_summary(&refs, &grid)?);
    }
    let mut s = String::from("mu");
    for (label, _) in runs {
        let _ = write!(s, ",{label}.median,{label}.q25,{label}.q75");
    }
    s.push('\n');
    for (g, mu) in grid.iter().enumerate() {
        let _ = write!(s, "{mu}");
        for c in &summaries {
            let _ = write!(s, ",{},{},{}", c.median.values[g], c.q25.values[g], c.q75.values[g]);
        }
        s.push('\n');
    }
    Ok(s)
}

pub fn cmd_curves(runs: &[PathBuf], labels: &[String], filter: &SnapshotFilter, grid: usize, out: &Path) -> Result<()> {
    if !labels.is_empty() && labels.len() != runs.len() {
        return Err(LabError::Usage(format!("{} labels for {} runs", labels.len(), runs.len())));
    }
    let named: Vec<(String, PathBuf)> = runs
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let label = labels.get(i).cloned().unwrap_or_else(|| {
                r.file_name().map_or_else(|| format!("run{i}"), |n| n.to_string_lossy().into_owned())
            });
            (label, r.clone())
        })
        .collect();
    write(out, curves_csv(&named, filter, grid)?)
}

pub fn cmd_verify(suite: &str, schedule: &str, schedule_file: Option<&Path>, matrices: usize) -> Result<Outcome> {
    let suite: Suite = suite.parse()?;
    let schedule = match schedule_file {
        Some(path) => load_schedule_file(path)?
            .remove(schedule)
            .ok_or_else(|| LabError::config(path, format!("no schedule named `{schedule}`")))?,
        None => bundled_schedule(schedule)?,
    };
    let report = run_suite(
        suite,
        &VerifyOptions {
            schedule,
            polar_matrices: matrices.max(1),
        },
    );
    let text = report.to_toml();
    Ok(if report.passed {
        Outcome::Done(text)
    } else {
        Outcome::VerifyFailed(text)
    })
}

pub fn cmd_import_grad(files: &[PathBuf], store: &Path, meta: &SnapshotMeta, step_stride: u64) -> Result<usize> {
    let mut matrices = Vec::with_capacity(files.len());
    for f in files {
        matrices.push(read_matrix_file(f)?);
    }
    let mut st = SnapshotStore::create(store)?;
    for (i, m) in matrices.iter().enumerate() {
        let meta = SnapshotMeta {
            step: meta.step + i as u64 * step_stride,
            ..meta.clone()
        };
        st.append(&snapshot_from_matrix(m, meta)?)?;
    }
    Ok(matrices.len())
}

/// Execute a parsed command line.
pub fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Generate { spec, out } => Ok(Outcome::Done(cmd_generate(&spec, &out)?.display().to_string())),
        Command::Train { config, run_root: root } => cmd_train(&config, &root.unwrap_or_else(run_root)),
        Command::Atlas {
            run_a,
            run_b,
            p,
            filter,
            out,
            pgm,
        } => cmd_atlas(&run_a, &run_b, p, &filter.to_filter(), &out, pgm.as_deref()).map(Outcome::Done),
        Command::Curves {
            runs,
            labels,
            filter,
            grid,
            out,
        } => {
            cmd_curves(&runs, &labels, &filter.to_filter(), grid, &out)?;
            Ok(Outcome::Done(out.display().to_string()))
        }
        Command::Verify {
            suite,
            schedule,
            schedule_file,
            matrices,
            out,
        } => {
            let outcome = cmd_verify(&suite, &schedule, schedule_file.as_deref(), matrices)?;
            if let Some(path) = out {
                write(&path, outcome.message())?;
            }
            Ok(outcome)
        }
        Command::ImportGrad {
            files,
            store,
            run_id,
            step,
            step_stride,
            family,
            depth,
            kind,
        } => {
            let meta = SnapshotMeta {
                run_id,
                step,
                family,
                depth,
                kind,
            };
            let n = cmd_import_grad(&files, &store, &meta, step_stride)?;
            Ok(Outcome::Done(format!("{n} records appended to {}", store.display())))
        }
    }
}
