//! Self-check suites run by `muonlab verify`.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use muonlab_core::linalg::{cholesky, qr_thin, svd, sym_eig};
use muonlab_core::orthogonalize::{newton_schulz_observed, polar_exact, whiten, NsCoeffSchedule, WhiteningKind};
use muonlab_core::rng::stream;
use muonlab_core::spectral::{
    cumulative_energy, energy_quantile_rank, rank_ratio_atlas, BlockFamily, SnapshotKind, SnapshotMeta,
    SpectrumSnapshot,
};
use muonlab_core::theory::{augmented_cov, gaussian_matrix, muon_invariance_check, random_orthonormal, random_spd, rate_compare, LinearProblem};
use muonlab_core::vit::{gradcheck, micro_config, VitModel, GRADCHECK_STEP};
use muonlab_core::recipes::ImageBatch;
use muonlab_core::Matrix;
use rand::Rng;
use serde::Serialize;

use crate::error::{LabError, Result};

/// Every singular value of a Newton-Schulz output must land here for inputs
/// with condition number at most 100.
pub const NS_BAND: (f64, f64) = (0.5, 1.25);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Linalg,
    Polar,
    Spectral,
    Theory,
    Gradcheck,
    All,
}

impl Suite {
    pub const EACH: [Suite; 5] = [Suite::Linalg, Suite::Polar, Suite::Spectral, Suite::Theory, Suite::Gradcheck];

    pub fn as_str(self) -> &'static str {
        match self {
            Suite::Linalg => "linalg",
            Suite::Polar => "polar",
            Suite::Spectral => "spectral",
            Suite::Theory => "theory",
            Suite::Gradcheck => "gradcheck",
            Suite::All => "all",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Suite {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self> {
        Suite::EACH
            .into_iter()
            .chain([Suite::All])
            .find(|x| x.as_str() == s)
            .ok_or_else(|| LabError::Usage(format!("unknown suite `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    /// Informational checks are reported but never fail the suite.
    pub gating: bool,
    pub passed: bool,
    #[serde(skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

impl Check {
    /// `value ≤ tolerance`.
    fn at_most(name: &str, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            tolerance,
            gating: true,
            passed: value <= tolerance,
            detail: String::new(),
        }
    }

    fn info(mut self) -> Self {
        self.gating = false;
        self
    }

    fn detail(mut self, d: impl Into<String>) -> Self {
        self.detail = d.into();
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub passed: bool,
    pub seconds: f64,
    pub checks: Vec<Check>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub suites: Vec<SuiteReport>,
}

impl VerifyReport {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("report serializes")
    }
}

/// Evaluate `f` on `0..n` across the available cores, in index order.
fn par_map<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let workers = std::thread::available_parallelism().map_or(1, |w| w.get()).min(n.max(1));
    let mut out: Vec<Option<T>> = (0..n).map(|_| None).collect();
    std::thread::scope(|s| {
        let f = &f;
        let chunks: Vec<_> = out
            .chunks_mut(n.div_ceil(workers).max(1))
            .enumerate()
            .map(|(c, chunk)| {
                let start = c * n.div_ceil(workers).max(1);
                s.spawn(move || {
                    for (i, slot) in chunk.iter_mut().enumerate() {
                        *slot = Some(f(start + i));
                    }
                })
            })
            .collect();
        for h in chunks {
            h.join().expect("verify worker panicked");
        }
    });
    out.into_iter().map(|v| v.expect("filled")).collect()
}

fn max_of(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |a, b| if b.is_nan() || a.is_nan() { f64::NAN } else { a.max(b) })
}

fn rel(a: &Matrix, b: &Matrix) -> f64 {
    a.sub(b).map_or(f64::INFINITY, |d| d.frobenius_norm() / b.frobenius_norm().max(f64::MIN_POSITIVE))
}

/// `n x n` matrix `U·diag(σ)·Vᵀ` with log-uniform `σ ∈ [1/cond, 1]`, both
/// ends attained.
pub fn conditioned_square(n: usize, cond: f64, seed: u64) -> Matrix {
    let mut rng = stream(seed, &[0xC0D]);
    let u = random_orthonormal(n, n, &mut rng).expect("qr of gaussian");
    let v = random_orthonormal(n, n, &mut rng).expect("qr of gaussian");
    let mut us = u;
    for j in 0..n {
        let s = match j {
            0 => 1.0,
            1 => 1.0 / cond,
            _ => cond.powf(-rng.random::<f64>()),
        };
        for i in 0..n {
            us[(i, j)] *= s;
        }
    }
    us.matmul_nt(&v).expect("square")
}

pub fn linalg_suite() -> Vec<Check> {
    let shapes = [(1, 1), (3, 7), (7, 3), (12, 12), (16, 5), (9, 20)];
    let errs = par_map(shapes.len() * 5, |i| {
        let (r, c) = shapes[i % shapes.len()];
        let mut rng = stream(i as u64, &[0x11A]);
        let m = gaussian_matrix(r, c, &mut rng);
        let s = svd(&m).expect("svd");
        let ortho = |q: &Matrix| {
            let g = q.matmul_tn(q).expect("square");
            g.sub(&Matrix::identity(g.rows())).expect("same").max_abs()
        };
        let sorted = s.sigma.windows(2).all(|w| w[0] >= w[1]) && s.sigma.iter().all(|v| *v >= 0.0);
        let spd = m.matmul_nt(&m).expect("gram");
        let mut shifted = spd.clone();
        for k in 0..r {
            shifted[(k, k)] += 1.0;
        }
        let e = sym_eig(&spd).expect("eig");
        let l = cholesky(&shifted).expect("chol");
        let (q, rr) = qr_thin(&if r >= c { m.clone() } else { m.transpose() }).expect("qr");
        let qr_in = if r >= c { m.clone() } else { m.transpose() };
        [
            rel(&s.reconstruct(), &m),
            ortho(&s.u).max(ortho(&s.vt.transpose())),
            if sorted { 0.0 } else { 1.0 },
            rel(&e.reconstruct(), &spd),
            rel(&l.matmul_nt(&l).expect("llt"), &shifted),
            rel(&q.matmul(&rr).expect("qr"), &qr_in).max(ortho(&q)),
        ]
    });
    let col = |k: usize| max_of(errs.iter().map(|e| e[k]));
    vec![
        Check::at_most("svd_reconstruction", col(0), 1e-12),
        Check::at_most("svd_orthogonality", col(1), 1e-12),
        Check::at_most("svd_ordering", col(2), 0.0),
        Check::at_most("sym_eig_reconstruction", col(3), 1e-12),
        Check::at_most("cholesky_reconstruction", col(4), 1e-12),
        Check::at_most("qr_reconstruction_and_orthogonality", col(5), 1e-12),
    ]
}

/// Polar-factor and whitening checks; `schedule` is the Newton-Schulz
/// schedule under test.
pub fn polar_suite(schedule: &NsCoeffSchedule, matrices: usize) -> Vec<Check> {
    let runs = par_map(matrices, |i| {
        let m = conditioned_square(64, 100.0, i as u64);
        let exact = polar_exact(&m).expect("polar");
        let mut norms = Vec::new();
        let approx = newton_schulz_observed(&m, schedule, |_, x| norms.push(x.frobenius_norm()));
        let ortho = exact.matmul_tn(&exact).expect("square").sub(&Matrix::identity(64)).expect("same").max_abs();
        match approx {
            Ok(x) => {
                let s = svd(&x).expect("svd").sigma;
                let lo = s.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = s.iter().copied().fold(0.0, f64::max);
                (ortho, x.sub(&exact).expect("same").frobenius_norm(), lo, hi, norms, None)
            }
            Err(e) => (ortho, f64::INFINITY, 0.0, f64::INFINITY, norms, Some(e.to_string())),
        }
    });
    let worst_lo = runs.iter().map(|r| r.2).fold(f64::INFINITY, f64::min);
    let worst_hi = runs.iter().map(|r| r.3).fold(0.0, f64::max);
    let band_dev = (NS_BAND.0 - worst_lo).max(worst_hi - NS_BAND.1).max(0.0);
    let failing = runs.iter().position(|r| r.2 < NS_BAND.0 || r.3 > NS_BAND.1 || r.5.is_some());
    let diagnostics = match failing {
        Some(i) => {
            let r = &runs[i];
            let norms: Vec<String> = r.4.iter().map(|n| format!("{n:.3e}")).collect();
            format!(
                "matrix {i}: singular values in [{:.3e}, {:.3e}], iterate norms [{}]{}",
                r.2,
                r.3,
                norms.join(", "),
                r.5.as_ref().map(|e| format!(", error: {e}")).unwrap_or_default()
            )
        }
        None => format!("singular values in [{worst_lo:.4}, {worst_hi:.4}]"),
    };
    let mut checks = vec![
        Check::at_most("polar_exact_orthogonality", max_of(runs.iter().map(|r| r.0)), 1e-10),
        Check::at_most("newton_schulz_band_violation", band_dev, 0.0).detail(format!("schedule `{}`: {diagnostics}", schedule.name())),
        Check::at_most("newton_schulz_frobenius_gap", max_of(runs.iter().map(|r| r.1)), 1e-3)
            .info()
            .detail(format!("schedule `{}` against the exact polar factor", schedule.name())),
    ];
    let reference = NsCoeffSchedule::cubic_precise();
    let gaps = par_map(matrices.min(20), |i| {
        let m = conditioned_square(64, 100.0, i as u64);
        let x = muonlab_core::orthogonalize::newton_schulz(&m, &reference).expect("cubic");
        x.sub(&polar_exact(&m).expect("polar")).expect("same").frobenius_norm()
    });
    checks.push(
        Check::at_most("cubic_precise_frobenius_gap", max_of(gaps), 1e-3).detail(format!("schedule `{}`", reference.name())),
    );
    let whitening = par_map(100, |i| {
        let mut rng = stream(i as u64, &[0x3E1]);
        let m = gaussian_matrix(8, 16, &mut rng);
        let mut worst: f64 = 0.0;
        for kind in WhiteningKind::ALL {
            let w = whiten(&m, kind).expect("full row rank");
            let g = w.matmul_nt(&w).expect("gram");
            worst = worst.max(g.sub(&Matrix::identity(8)).expect("same").max_abs());
        }
        let zca = whiten(&m, WhiteningKind::ZcaPolar).expect("zca");
        (worst, zca.sub(&polar_exact(&m).expect("polar")).expect("same").max_abs())
    });
    checks.push(Check::at_most("whitening_identity_gram", max_of(whitening.iter().map(|w| w.0)), 1e-8));
    checks.push(Check::at_most("zca_polar_equals_polar", max_of(whitening.iter().map(|w| w.1)), 1e-9));
    checks
}

/// First `k` prefixes enumerated directly.
fn brute_rank(sigma: &[f64], p: f64) -> f64 {
    let total: f64 = sigma.iter().map(|s| s * s).sum();
    (1..=sigma.len())
        .find(|&k| sigma[..k].iter().map(|s| s * s).sum::<f64>() / total >= p)
        .unwrap_or(sigma.len()) as f64
        / sigma.len() as f64
}

fn snapshot(step: u64, depth: usize, sigma: Vec<f64>) -> SpectrumSnapshot {
    SpectrumSnapshot::new(
        SnapshotMeta {
            run_id: "verify".into(),
            step,
            family: BlockFamily::Qkv,
            depth,
            kind: SnapshotKind::Gradient,
        },
        sigma,
    )
    .expect("valid spectrum")
}

pub fn spectral_suite() -> Vec<Check> {
    let mismatches = par_map(1000, |i| {
        let mut rng = stream(i as u64, &[0x5EC]);
        let r = rng.random_range(1..=12);
        let mut sigma: Vec<f64> = (0..r).map(|_| rng.random::<f64>() * 10.0).collect();
        sigma.sort_by(|a, b| b.total_cmp(a));
        sigma[0] = sigma[0].max(1e-3);
        let p = [0.5, 0.9, 0.99, rng.random_range(0.01..1.0)][i % 4];
        usize::from(energy_quantile_rank(&sigma, p).expect("rank") != brute_rank(&sigma, p))
    });
    let mut rng = stream(0, &[0x5ED]);
    let run = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<SpectrumSnapshot> {
        (0..20)
            .map(|i| {
                let mut s: Vec<f64> = (0..8).map(|_| rng.random::<f64>()).collect();
                s.sort_by(|a, b| b.total_cmp(a));
                snapshot(i / 4, (i % 4) as usize, s)
            })
            .collect()
    };
    let (a, b) = (run(&mut rng), run(&mut rng));
    let ab = rank_ratio_atlas(&a, &b, 0.9).expect("aligned");
    let ba = rank_ratio_atlas(&b, &a, 0.9).expect("aligned");
    let recip = max_of(ab.cells.iter().zip(&ba.cells).map(|(x, y)| (x.ratio * y.ratio - 1.0).abs()));
    let uniform = vec![snapshot(0, 0, vec![1.0; 10])];
    let spike = vec![snapshot(0, 0, {
        let mut s = vec![0.0; 10];
        s[0] = 1.0;
        s
    })];
    let nine = rank_ratio_atlas(&uniform, &spike, 0.9).expect("aligned").cells[0].ratio;
    let monotone = par_map(200, |i| {
        let mut rng = stream(i as u64, &[0x5EE]);
        let r = rng.random_range(1..=30);
        let mut s: Vec<f64> = (0..r).map(|_| rng.random::<f64>() + 1e-3).collect();
        s.sort_by(|a, b| b.total_cmp(a));
        let c: Vec<f64> = (0..=100).map(|k| cumulative_energy(&s, k as f64 / 100.0).expect("c")).collect();
        let drop = max_of(c.windows(2).map(|w| w[0] - w[1]));
        let above_diag = max_of((0..=100).map(|k| k as f64 / 100.0 - c[k] - 1.0 / r as f64));
        drop.max(above_diag).max((c[100] - 1.0).abs())
    });
    vec![
        Check::at_most("rank_matches_enumeration", mismatches.iter().sum::<usize>() as f64, 0.0)
            .detail("mismatching spectra out of 1000"),
        Check::at_most("atlas_reciprocity", recip, 1e-12),
        Check::at_most("uniform_over_rank_one_ratio_error", (nine - 9.0).abs(), 1e-9).detail(format!("ratio {nine}")),
        Check::at_most("energy_curve_shape", max_of(monotone), 1e-12)
            .detail("monotone, ends at 1, dominates the diagonal up to one grid cell"),
    ]
}

pub fn theory_suite() -> Vec<Check> {
    let residuals = par_map(100, |i| {
        let mut rng = stream(i as u64, &[0x7E0]);
        let d = rng.random_range(2..=32);
        let m = rng.random_range(d..=64);
        let sigma = random_spd(d, 100.0, &mut rng).expect("spd");
        let ops: Vec<Matrix> = (0..3)
            .map(|_| {
                let mut a = gaussian_matrix(d, d, &mut rng).scaled(0.3);
                for k in 0..d {
                    a[(k, k)] += 1.0;
                }
                a
            })
            .collect();
        let alpha = rng.random_range(0.1..10.0);
        let p = LinearProblem::isotropic(m, d, alpha, sigma, ops, &mut rng).expect("problem");
        muon_invariance_check(&p).expect("full rank")
    });
    let rates = par_map(20, |i| {
        let mut rng = stream(i as u64, &[0x7E1]);
        let d = rng.random_range(2..=16);
        let sigma = random_spd(d, 1e4, &mut rng).expect("spd");
        let p = LinearProblem::isotropic(d + 3, d, rng.random_range(0.5..4.0), sigma, vec![], &mut rng).expect("problem");
        let eta = 0.5;
        let r = rate_compare(&p, eta, 5).expect("rates");
        let predicted = 1.0 - eta / p.alpha.sqrt();
        let muon = r.muon.direction_factors[0]
            .iter()
            .chain([&r.muon.step_factors[0]])
            .map(|f| (f - predicted).abs());
        let gd = r
            .gd
            .direction_factors
            .iter()
            .flat_map(|step| step.iter().zip(&r.eigenvalues).map(|(f, l)| (f - (1.0 - eta * l)).abs()).collect::<Vec<_>>());
        (max_of(muon), max_of(gd))
    });
    let mut rng = stream(0, &[0x7E2]);
    let sigma = random_spd(6, 10.0, &mut rng).expect("spd");
    let ops: Vec<Matrix> = (0..4).map(|_| random_orthonormal(6, 6, &mut rng).expect("q")).collect();
    let iso = augmented_cov(&Matrix::identity(6), &ops).expect("cov");
    let sym = augmented_cov(&sigma, &ops).expect("cov");
    let min_eig = sym_eig(&sym).expect("eig").values.last().copied().unwrap_or(0.0);
    vec![
        Check::at_most("muon_invariance_residual", max_of(residuals), 1e-8).detail("100 isotropic problems, d <= 32"),
        Check::at_most("muon_first_step_factor", max_of(rates.iter().map(|r| r.0)), 1e-10),
        Check::at_most("gd_direction_factors", max_of(rates.iter().map(|r| r.1)), 1e-10),
        Check::at_most("orthogonal_augmentation_keeps_identity", rel(&iso, &Matrix::identity(6)), 1e-12),
        Check::at_most("augmented_cov_psd", (-min_eig).max(sym.asymmetry().unwrap_or(f64::INFINITY)), 1e-12),
    ]
}

pub fn gradcheck_suite() -> Vec<Check> {
    let cfg = micro_config();
    let model = VitModel::new(cfg.clone(), &mut stream(11, &[0x6C])).expect("model");
    let mut rng = stream(12, &[0x6C]);
    let n = 2;
    let pixels: Vec<f64> = (0..n * cfg.channels * cfg.image_size * cfg.image_size)
        .map(|_| rng.random_range(-2.0..2.0))
        .collect();
    let mut labels = Matrix::from_fn(n, cfg.num_classes, |_, _| rng.random::<f64>() + 0.1);
    for i in 0..n {
        let s: f64 = labels.row(i).iter().sum();
        labels.row_mut(i).iter_mut().for_each(|v| *v /= s);
    }
    let batch = ImageBatch::new(n, cfg.channels, cfg.image_size, cfg.image_size, pixels, labels).expect("batch");
    let report = gradcheck(&model, &batch, GRADCHECK_STEP).expect("gradcheck");
    report
        .iter()
        .map(|e| Check::at_most(&format!("gradcheck.{}", e.name), e.rel_error, 1e-4).detail(e.family.as_str()))
        .collect()
}

pub struct VerifyOptions {
    pub schedule: NsCoeffSchedule,
    pub polar_matrices: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            schedule: NsCoeffSchedule::standard(),
            polar_matrices: 200,
        }
    }
}

pub fn run_suite(suite: Suite, opts: &VerifyOptions) -> VerifyReport {
    let suites: Vec<Suite> = match suite {
        Suite::All => Suite::EACH.to_vec(),
        s => vec![s],
    };
    let reports: Vec<SuiteReport> = suites
        .into_iter()
        .map(|s| {
            let start = Instant::now();
            let checks = match s {
                Suite::Linalg => linalg_suite(),
                Suite::Polar => polar_suite(&opts.schedule, opts.polar_matrices),
                Suite::Spectral => spectral_suite(),
                Suite::Theory => theory_suite(),
                Suite::Gradcheck => gradcheck_suite(),
                Suite::All => unreachable!(),
            };
            SuiteReport {
                suite: s.as_str().into(),
                passed: checks.iter().all(|c| c.passed || !c.gating),
                seconds: start.elapsed().as_secs_f64(),
                checks,
            }
        })
        .collect();
    VerifyReport {
        passed: reports.iter().all(|r| r.passed),
        suites: reports,
    }
}
