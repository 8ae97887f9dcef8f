//! Gradient-spectrum diagnostics: cumulative energy curves, energy-quantile
//! ranks, cross-run ratio atlases and median/IQR curve summaries.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

#[cfg(not(feature = "std"))]
#[allow(unused_imports)]
use num_traits::Float as _;

use crate::error::{Error, Result};
use crate::linalg::{svd, Matrix};

/// Default energy quantile for atlases.
pub const DEFAULT_ENERGY_QUANTILE: f64 = 0.9;

/// Snapshots whose total energy falls below this are quarantined.
pub const QUARANTINE_ENERGY: f64 = 1e-30;

/// Slack on `μ·r` before flooring, so that grid points such as `1/3` map to
/// the intended prefix despite rounding in `μ`.
const FLOOR_SLACK: f64 = 1e-9;

/// Matrix-parameter family used as an atlas axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum BlockFamily {
    Qkv,
    OutProj,
    MlpUp,
    MlpDown,
    Other,
}

impl BlockFamily {
    pub const ALL: [BlockFamily; 5] = [
        BlockFamily::Qkv,
        BlockFamily::OutProj,
        BlockFamily::MlpUp,
        BlockFamily::MlpDown,
        BlockFamily::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BlockFamily::Qkv => "qkv",
            BlockFamily::OutProj => "out_proj",
            BlockFamily::MlpUp => "mlp_up",
            BlockFamily::MlpDown => "mlp_down",
            BlockFamily::Other => "other",
        }
    }
}

impl fmt::Display for BlockFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BlockFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BlockFamily::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::Config(alloc::format!("unknown block family `{s}`")))
    }
}

/// Whether a snapshot was taken of the raw gradient or of the momentum the
/// optimizer feeds into its update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SnapshotKind {
    Gradient,
    Momentum,
}

impl SnapshotKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SnapshotKind::Gradient => "gradient",
            SnapshotKind::Momentum => "momentum",
        }
    }
}

impl fmt::Display for SnapshotKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SnapshotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradient" => Ok(SnapshotKind::Gradient),
            "momentum" => Ok(SnapshotKind::Momentum),
            _ => Err(Error::Config(alloc::format!("unknown snapshot kind `{s}`"))),
        }
    }
}

/// Identifying metadata of a snapshot.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SnapshotMeta {
    pub run_id: String,
    pub step: u64,
    pub family: BlockFamily,
    pub depth: usize,
    pub kind: SnapshotKind,
}

/// Singular values of one captured matrix plus its metadata.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SpectrumSnapshot {
    pub meta: SnapshotMeta,
    sigma: Vec<f64>,
}

impl SpectrumSnapshot {
    /// Validates that `sigma` is non-empty, finite, non-negative and sorted
    /// non-increasing.
    pub fn new(meta: SnapshotMeta, sigma: Vec<f64>) -> Result<Self> {
        if sigma.is_empty() {
            return Err(Error::Shape("spectrum must have at least one value".into()));
        }
        if sigma.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::NonFinite("spectrum"));
        }
        if sigma.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::Shape("spectrum must be sorted non-increasing".into()));
        }
        Ok(Self { meta, sigma })
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn total_energy(&self) -> f64 {
        total_energy(&self.sigma)
    }

    /// Admitted to ratio analysis (not a dead block).
    pub fn is_admitted(&self) -> bool {
        self.total_energy() >= QUARANTINE_ENERGY
    }
}

/// Thin-SVD singular values of `m` with the given metadata.
pub fn snapshot_from_matrix(m: &Matrix, meta: SnapshotMeta) -> Result<SpectrumSnapshot> {
    if !m.is_finite() {
        return Err(Error::NonFinite("snapshot input"));
    }
    SpectrumSnapshot::new(meta, svd(m)?.sigma)
}

fn total_energy(sigma: &[f64]) -> f64 {
    sigma.iter().map(|s| s * s).sum()
}

fn check_spectrum(sigma: &[f64]) -> Result<f64> {
    let total = total_energy(sigma);
    if sigma.is_empty() || !(total > 0.0) {
        return Err(Error::DegenerateSpectrum);
    }
    Ok(total)
}

/// `C(μ) = Σ_{i ≤ ⌊μr⌋} σᵢ² / Σ σᵢ²`.
pub fn cumulative_energy(sigma: &[f64], mu: f64) -> Result<f64> {
    let total = check_spectrum(sigma)?;
    let r = sigma.len();
    let k = ((mu.clamp(0.0, 1.0) * r as f64) + FLOOR_SLACK).floor() as usize;
    let k = k.min(r);
    if k == r {
        return Ok(1.0);
    }
    Ok(total_energy(&sigma[..k]) / total)
}

/// Smallest normalized rank `k/r` whose top-`k` energy fraction is at least
/// `p`. Prefix sums accumulate left to right.
pub fn energy_quantile_rank(sigma: &[f64], p: f64) -> Result<f64> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Config(alloc::format!("energy quantile {p} outside (0, 1]")));
    }
    let total = check_spectrum(sigma)?;
    let r = sigma.len();
    let mut acc = 0.0;
    for (i, s) in sigma.iter().enumerate() {
        acc += s * s;
        if acc / total >= p {
            return Ok((i + 1) as f64 / r as f64);
        }
    }
    // Rounding can leave the full prefix a hair below p = 1.
    Ok(1.0)
}

/// Cumulative energy on a grid of `μ` values.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyCurve {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
}

impl EnergyCurve {
    pub fn of(sigma: &[f64], grid: &[f64]) -> Result<Self> {
        let values = grid
            .iter()
            .map(|mu| cumulative_energy(sigma, *mu))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid: grid.to_vec(),
            values,
        })
    }
}

/// `n` evenly spaced points `1/n, 2/n, …, 1`.
pub fn uniform_grid(n: usize) -> Vec<f64> {
    (1..=n).map(|i| i as f64 / n as f64).collect()
}

/// Lattice coordinate of an atlas cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LatticePoint {
    pub family: BlockFamily,
    pub depth: usize,
    pub step: u64,
    pub kind: SnapshotKind,
}

impl LatticePoint {
    pub fn of(meta: &SnapshotMeta) -> Self {
        Self {
            family: meta.family,
            depth: meta.depth,
            step: meta.step,
            kind: meta.kind,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AtlasCell {
    pub family: BlockFamily,
    pub depth: usize,
    pub step: u64,
    pub kind: SnapshotKind,
    pub ratio: f64,
}

/// Why lattice points were left out of an atlas.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OmissionReport {
    pub only_in_a: usize,
    pub only_in_b: usize,
    pub quarantined_a: usize,
    pub quarantined_b: usize,
}

impl OmissionReport {
    pub fn total(&self) -> usize {
        self.only_in_a + self.only_in_b + self.quarantined_a + self.quarantined_b
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AtlasReport {
    pub p: f64,
    pub cells: Vec<AtlasCell>,
    pub omissions: OmissionReport,
}

fn index_by_point<'a>(
    run: &'a [SpectrumSnapshot],
) -> (BTreeMap<LatticePoint, &'a SpectrumSnapshot>, usize) {
    let mut map = BTreeMap::new();
    let mut quarantined = 0;
    for s in run {
        if s.is_admitted() {
            map.insert(LatticePoint::of(&s.meta), s);
        } else {
            quarantined += 1;
        }
    }
    (map, quarantined)
}

/// `μ_p(A) / μ_p(B)` for every lattice point present (and admitted) in both
/// runs, in lattice order. Points are matched on exact step equality.
pub fn rank_ratio_atlas(
    run_a: &[SpectrumSnapshot],
    run_b: &[SpectrumSnapshot],
    p: f64,
) -> Result<AtlasReport> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Config(alloc::format!("energy quantile {p} outside (0, 1]")));
    }
    let (a, quarantined_a) = index_by_point(run_a);
    let (b, quarantined_b) = index_by_point(run_b);
    let mut cells = Vec::new();
    let mut only_in_a = 0;
    for (pt, sa) in &a {
        match b.get(pt) {
            Some(sb) => {
                let ratio =
                    energy_quantile_rank(sa.sigma(), p)? / energy_quantile_rank(sb.sigma(), p)?;
                cells.push(AtlasCell {
                    family: pt.family,
                    depth: pt.depth,
                    step: pt.step,
                    kind: pt.kind,
                    ratio,
                });
            }
            None => only_in_a += 1,
        }
    }
    if cells.is_empty() {
        return Err(Error::Alignment);
    }
    let only_in_b = b.keys().filter(|pt| !a.contains_key(pt)).count();
    Ok(AtlasReport {
        p,
        cells,
        omissions: OmissionReport {
            only_in_a,
            only_in_b,
            quarantined_a,
            quarantined_b,
        },
    })
}

/// Pointwise order statistics of cumulative energy curves.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveSummary {
    pub median: EnergyCurve,
    pub q25: EnergyCurve,
    pub q75: EnergyCurve,
    /// Snapshots that contributed.
    pub used: usize,
    /// Zero-energy snapshots skipped.
    pub quarantined: usize,
}

/// Nearest-rank (inclusive) quantile of an ascending slice:
/// `sorted[⌈q·n⌉ − 1]`, with `q = 0` mapping to the minimum.
pub fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = (q * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Median and quartile curves across the admitted snapshots.
pub fn curve_summary(snapshots: &[&SpectrumSnapshot], grid: &[f64]) -> Result<CurveSummary> {
    let admitted: Vec<&SpectrumSnapshot> =
        snapshots.iter().copied().filter(|s| s.is_admitted()).collect();
    let quarantined = snapshots.len() - admitted.len();
    if admitted.is_empty() || grid.is_empty() {
        return Err(Error::EmptySelection);
    }
    let curves = admitted
        .iter()
        .map(|s| EnergyCurve::of(s.sigma(), grid))
        .collect::<Result<Vec<_>>>()?;
    let mut median = Vec::with_capacity(grid.len());
    let mut q25 = Vec::with_capacity(grid.len());
    let mut q75 = Vec::with_capacity(grid.len());
    let mut column = Vec::with_capacity(curves.len());
    for g in 0..grid.len() {
        column.clear();
        column.extend(curves.iter().map(|c| c.values[g]));
        column.sort_by(f64::total_cmp);
        median.push(nearest_rank(&column, 0.5));
        q25.push(nearest_rank(&column, 0.25));
        q75.push(nearest_rank(&column, 0.75));
    }
    let curve = |values| EnergyCurve {
        grid: grid.to_vec(),
        values,
    };
    Ok(CurveSummary {
        median: curve(median),
        q25: curve(q25),
        q75: curve(q75),
        used: admitted.len(),
        quarantined,
    })
}

/// Conjunctive snapshot filter; `None` fields match everything. Ranges are
/// inclusive.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SnapshotFilter {
    pub run_id: Option<String>,
    pub family: Option<BlockFamily>,
    pub kind: Option<SnapshotKind>,
    pub depth: Option<(usize, usize)>,
    pub step: Option<(u64, u64)>,
}

impl SnapshotFilter {
    pub fn matches(&self, m: &SnapshotMeta) -> bool {
        self.run_id.as_ref().is_none_or(|r| *r == m.run_id)
            && self.family.is_none_or(|f| f == m.family)
            && self.kind.is_none_or(|k| k == m.kind)
            && self.depth.is_none_or(|(lo, hi)| (lo..=hi).contains(&m.depth))
            && self.step.is_none_or(|(lo, hi)| (lo..=hi).contains(&m.step))
    }
}

/// Matching snapshots in their original order.
pub fn select_snapshots<'a>(
    store: &'a [SpectrumSnapshot],
    filter: &SnapshotFilter,
) -> Vec<&'a SpectrumSnapshot> {
    store.iter().filter(|s| filter.matches(&s.meta)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::gaussian;
    use alloc::string::ToString;
    use alloc::vec;
    use proptest::prelude::*;
    use rand::Rng;

    fn meta(run: &str, family: BlockFamily, depth: usize, step: u64) -> SnapshotMeta {
        SnapshotMeta {
            run_id: run.to_string(),
            step,
            family,
            depth,
            kind: SnapshotKind::Gradient,
        }
    }

    fn snap(run: &str, family: BlockFamily, depth: usize, step: u64, sigma: Vec<f64>) -> SpectrumSnapshot {
        SpectrumSnapshot::new(meta(run, family, depth, step), sigma).unwrap()
    }

    /// Enumerate every prefix and keep the first that reaches `p`.
    fn brute_force_rank(sigma: &[f64], p: f64) -> f64 {
        let total: f64 = sigma.iter().map(|s| s * s).sum();
        let r = sigma.len();
        for k in 1..=r {
            let mut e = 0.0;
            for s in &sigma[..k] {
                e += s * s;
            }
            if e / total >= p {
                return k as f64 / r as f64;
            }
        }
        1.0
    }

    #[test]
    fn cumulative_energy_examples() {
        assert_eq!(cumulative_energy(&[5.0, 2.0, 1.0], 1.0).unwrap(), 1.0);
        let c = cumulative_energy(&[2.0, 1.0, 0.0], 1.0 / 3.0).unwrap();
        assert!((c - 0.8).abs() < 1e-15);
        assert_eq!(cumulative_energy(&[7.0, 0.0, 0.0, 0.0], 0.25).unwrap(), 1.0);
        assert_eq!(cumulative_energy(&[7.0, 1.0], 0.0).unwrap(), 0.0);
        assert_eq!(cumulative_energy(&[7.0, 1.0, 1.0], 0.2).unwrap(), 0.0);
        assert_eq!(
            cumulative_energy(&[0.0, 0.0], 0.5).unwrap_err(),
            Error::DegenerateSpectrum
        );
    }

    #[test]
    fn quantile_rank_examples() {
        assert_eq!(energy_quantile_rank(&[1.0; 10], 0.5).unwrap(), 0.5);
        assert_eq!(
            energy_quantile_rank(&[10.0, 1e-3, 1e-3], 0.9).unwrap(),
            1.0 / 3.0
        );
        assert_eq!(energy_quantile_rank(&[3.0, 2.0, 1.0], 1.0).unwrap(), 1.0);
        assert!(energy_quantile_rank(&[0.0], 0.5).is_err());
        assert!(energy_quantile_rank(&[1.0], 0.0).is_err());
    }

    #[test]
    fn quantile_rank_matches_brute_force() {
        let mut rng = crate::rng::stream(42, &[]);
        for _ in 0..1000 {
            let r = rng.random_range(1..=12);
            let mut sigma: Vec<f64> = (0..r).map(|_| rng.random_range(1e-3..10.0)).collect();
            sigma.sort_by(|a, b| b.total_cmp(a));
            let p = rng.random_range(0.01..=1.0);
            assert_eq!(energy_quantile_rank(&sigma, p).unwrap(), brute_force_rank(&sigma, p));
        }
    }

    #[test]
    fn snapshot_examples() {
        let m = meta("r", BlockFamily::Qkv, 0, 0);
        let s = snapshot_from_matrix(&Matrix::identity(4), m.clone()).unwrap();
        assert!(s.sigma().iter().all(|v| (v - 1.0).abs() < 1e-12));

        let u = [1.0, 2.0, 2.0];
        let v = [3.0, 4.0];
        let outer = Matrix::from_fn(3, 2, |i, j| u[i] * v[j]);
        let s = snapshot_from_matrix(&outer, m.clone()).unwrap();
        assert!((s.sigma()[0] - 15.0).abs() < 1e-12);
        assert!(s.sigma()[1] < 1e-12);

        let g = gaussian(8, 8, 3);
        let s = snapshot_from_matrix(&g, m).unwrap();
        assert_eq!(s.sigma(), svd(&g).unwrap().sigma.as_slice());
    }

    #[test]
    fn snapshot_validation() {
        let m = meta("r", BlockFamily::Qkv, 0, 0);
        assert!(SpectrumSnapshot::new(m.clone(), vec![]).is_err());
        assert!(SpectrumSnapshot::new(m.clone(), vec![1.0, 2.0]).is_err());
        assert!(SpectrumSnapshot::new(m, vec![f64::NAN]).is_err());
    }

    fn lattice(run: &str, sigma: &[f64]) -> Vec<SpectrumSnapshot> {
        let mut out = Vec::new();
        for family in [BlockFamily::Qkv, BlockFamily::MlpDown] {
            for depth in 0..3 {
                for step in [0, 10, 20] {
                    out.push(snap(run, family, depth, step, sigma.to_vec()));
                }
            }
        }
        out
    }

    #[test]
    fn atlas_uniform_over_rank_one_is_nine() {
        let mut rank1 = vec![0.0; 10];
        rank1[0] = 1.0;
        let a = lattice("a", &[1.0; 10]);
        let b = lattice("b", &rank1);
        let report = rank_ratio_atlas(&a, &b, 0.9).unwrap();
        assert_eq!(report.cells.len(), 18);
        for c in &report.cells {
            assert!((c.ratio - 9.0).abs() < 1e-9, "{c:?}");
        }
        assert_eq!(report.omissions.total(), 0);

        let self_report = rank_ratio_atlas(&a, &a, 0.9).unwrap();
        assert!(self_report.cells.iter().all(|c| c.ratio == 1.0));
    }

    #[test]
    fn atlas_alignment_and_omissions() {
        let a = vec![snap("a", BlockFamily::Qkv, 0, 1, vec![1.0])];
        let b = vec![snap("b", BlockFamily::Qkv, 0, 2, vec![1.0])];
        assert_eq!(rank_ratio_atlas(&a, &b, 0.9).unwrap_err(), Error::Alignment);

        let mut a = lattice("a", &[2.0, 1.0]);
        a.push(snap("a", BlockFamily::OutProj, 0, 0, vec![1.0, 1.0]));
        let mut b = lattice("b", &[2.0, 1.0]);
        b[0] = snap("b", BlockFamily::Qkv, 0, 0, vec![0.0, 0.0]);
        let r = rank_ratio_atlas(&a, &b, 0.9).unwrap();
        assert_eq!(r.cells.len(), 17);
        assert_eq!(
            r.omissions,
            OmissionReport {
                only_in_a: 2,
                only_in_b: 0,
                quarantined_a: 0,
                quarantined_b: 1
            }
        );
    }

    #[test]
    fn atlas_reciprocity() {
        let mut rng = crate::rng::stream(9, &[]);
        let mut random_run = |run: &str| -> Vec<SpectrumSnapshot> {
            (0..20)
                .map(|d| {
                    let mut s: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..3.0)).collect();
                    s.sort_by(|a, b| b.total_cmp(a));
                    snap(run, BlockFamily::MlpUp, d, 5, s)
                })
                .collect()
        };
        let a = random_run("a");
        let b = random_run("b");
        let ab = rank_ratio_atlas(&a, &b, 0.9).unwrap();
        let ba = rank_ratio_atlas(&b, &a, 0.9).unwrap();
        for (x, y) in ab.cells.iter().zip(&ba.cells) {
            assert!((x.ratio * y.ratio - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn curve_summary_order_statistics() {
        let grid = uniform_grid(4);
        let one = snap("a", BlockFamily::Qkv, 0, 0, vec![3.0, 2.0, 1.0, 0.5]);
        let s = curve_summary(&[&one], &grid).unwrap();
        assert_eq!(s.median, s.q25);
        assert_eq!(s.median, s.q75);
        assert_eq!(s.median, EnergyCurve::of(one.sigma(), &grid).unwrap());

        // Flatter spectra lie pointwise below steeper ones.
        let f = snap("a", BlockFamily::Qkv, 0, 0, vec![1.0, 1.0, 1.0, 1.0]);
        let g = snap("a", BlockFamily::Qkv, 1, 0, vec![2.0, 1.0, 1.0, 1.0]);
        let h = snap("a", BlockFamily::Qkv, 2, 0, vec![4.0, 1.0, 1.0, 1.0]);
        let s = curve_summary(&[&h, &f, &g], &grid).unwrap();
        assert_eq!(s.median, EnergyCurve::of(g.sigma(), &grid).unwrap());

        assert_eq!(curve_summary(&[], &grid).unwrap_err(), Error::EmptySelection);
    }

    #[test]
    fn curve_summary_matches_sort_oracle() {
        let mut rng = crate::rng::stream(11, &[]);
        let snaps: Vec<SpectrumSnapshot> = (0..49)
            .map(|d| {
                let mut s: Vec<f64> = (0..6).map(|_| rng.random_range(0.01..5.0)).collect();
                s.sort_by(|a, b| b.total_cmp(a));
                snap("a", BlockFamily::MlpDown, d, 0, s)
            })
            .collect();
        let refs: Vec<&SpectrumSnapshot> = snaps.iter().collect();
        let grid = uniform_grid(12);
        let summary = curve_summary(&refs, &grid).unwrap();
        for (g, mu) in grid.iter().enumerate() {
            let mut col: Vec<f64> = snaps
                .iter()
                .map(|s| cumulative_energy(s.sigma(), *mu).unwrap())
                .collect();
            col.sort_by(f64::total_cmp);
            // 49 values: median is the 25th, quartiles the 13th and 37th.
            assert_eq!(summary.median.values[g], col[24]);
            assert_eq!(summary.q25.values[g], col[12]);
            assert_eq!(summary.q75.values[g], col[36]);
        }
    }

    #[test]
    fn selection() {
        let mut store = Vec::new();
        for depth in 0..12 {
            for family in [BlockFamily::MlpDown, BlockFamily::Qkv] {
                store.push(snap("a", family, depth, 100, vec![1.0]));
            }
        }
        assert_eq!(select_snapshots(&store, &SnapshotFilter::default()).len(), 24);
        let deep = SnapshotFilter {
            family: Some(BlockFamily::MlpDown),
            depth: Some((8, usize::MAX)),
            ..Default::default()
        };
        let picked = select_snapshots(&store, &deep);
        let depths: Vec<usize> = picked.iter().map(|s| s.meta.depth).collect();
        assert_eq!(depths, vec![8, 9, 10, 11]);
        let none = SnapshotFilter {
            step: Some((0, 10)),
            ..Default::default()
        };
        assert!(select_snapshots(&store, &none).is_empty());
    }

    #[test]
    fn family_round_trip() {
        for f in BlockFamily::ALL {
            assert_eq!(f.as_str().parse::<BlockFamily>().unwrap(), f);
        }
        assert!("nope".parse::<BlockFamily>().is_err());
    }

    proptest! {
        #[test]
        fn curve_monotone_and_scale_invariant(
            mut sigma in proptest::collection::vec(0.0f64..100.0, 1..20),
            c in 1e-3f64..1e3,
            p in 0.01f64..1.0,
        ) {
            sigma.sort_by(|a, b| b.total_cmp(a));
            prop_assume!(sigma[0] > 1e-6);
            let grid = uniform_grid(25);
            let curve = EnergyCurve::of(&sigma, &grid).unwrap();
            prop_assert!(curve.values.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!((curve.values[24] - 1.0).abs() < 1e-12);
            let scaled: Vec<f64> = sigma.iter().map(|s| s * c).collect();
            for mu in &grid {
                let d = cumulative_energy(&scaled, *mu).unwrap() - cumulative_energy(&sigma, *mu).unwrap();
                prop_assert!(d.abs() < 1e-12);
            }
            let lo = energy_quantile_rank(&sigma, p * 0.5).unwrap();
            let hi = energy_quantile_rank(&sigma, p).unwrap();
            prop_assert!(lo <= hi);
        }
    }
}
