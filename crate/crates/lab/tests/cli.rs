use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use muonlab::binfmt::{encode_matrix, write_matrix_file, Dtype};
use muonlab::run::RunRecord;
use muonlab::store::SnapshotStore;
use muonlab_core::spectral::{BlockFamily, SnapshotKind, SnapshotMeta, SpectrumSnapshot};
use muonlab_core::Matrix;
use tempfile::TempDir;

fn muonlab(args: &[&str], root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_muonlab"))
        .args(args)
        .env("MUONLAB_RUN_ROOT", root)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SPEC: &str = r#"
name = "tiny"
num_classes = 3
image_size = 8
channels = 2
generator = "gaussian_blobs"
noise = 0.5
seed = 7
counts = { profile = "constant", per_class = 12 }
"#;

fn train_doc(name: &str, steps: u64, optimizer: &str) -> String {
    format!(
        r#"name = "{name}"
seed = 2
total_steps = {steps}
batch_size = 8
eval_every = 2

[dataset]
{SPEC}
[model]
preset = "micro"

[optimizer]
preset = "{optimizer}"

[tap]
count = 2
families = ["qkv", "mlp_down"]
"#
    )
    .replace("\nname = \"tiny\"", "\nname = \"tiny-data\"")
}

fn write_file(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn train(tmp: &TempDir, root: &Path, name: &str, steps: u64, optimizer: &str) -> PathBuf {
    let cfg = write_file(tmp.path(), &format!("{name}.toml"), &train_doc(name, steps, optimizer));
    let out = muonlab(&["train", s(&cfg)], root);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    PathBuf::from(stdout(&out).trim())
}

fn parse_csv(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    (header, lines.map(|l| l.split(',').map(String::from).collect()).collect())
}

#[test]
fn generate_is_byte_deterministic() {
    let tmp = TempDir::new().unwrap();
    let spec = write_file(tmp.path(), "spec.toml", SPEC);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        let out = muonlab(&["generate", s(&spec), "--out", s(d)], tmp.path());
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    for f in ["manifest.toml", "records.mlab", "labels.mlab", "split.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let again = muonlab(&["generate", s(&spec), "--out", s(&a)], tmp.path());
    assert_eq!(code(&again), 3);
}

#[test]
fn malformed_spec_names_the_line() {
    let tmp = TempDir::new().unwrap();
    let spec = write_file(tmp.path(), "bad.toml", "name = \"x\"\nnum_classes = = 3\n");
    let out = muonlab(&["generate", s(&spec), "--out", s(&tmp.path().join("o"))], tmp.path());
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));
}

#[test]
fn zero_step_run_has_initial_evaluation_only() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path().join("runs");
    let dir = train(&tmp, &root, "zero", 0, "muon-1e-3");
    assert!(dir.starts_with(&root));
    let rec = RunRecord::load(&dir).unwrap();
    assert_eq!(rec.metrics.len(), 1);
    assert_eq!(rec.metrics[0].step, 0);
    for f in ["config.toml", "record.toml", "metrics.csv", "checkpoint/manifest.toml"] {
        assert!(dir.join(f).is_file(), "{f}");
    }
}

#[test]
fn reruns_match_modulo_wall_clock_and_collisions_refuse() {
    let tmp = TempDir::new().unwrap();
    let (r1, r2) = (tmp.path().join("r1"), tmp.path().join("r2"));
    let a = train(&tmp, &r1, "det", 4, "muon-1e-3");
    let b = train(&tmp, &r2, "det", 4, "muon-1e-3");
    assert_eq!(a.file_name(), b.file_name());
    let (ra, rb) = (RunRecord::load(&a).unwrap(), RunRecord::load(&b).unwrap());
    assert!(ra.timing.is_some());
    assert_eq!(ra.without_timing().to_toml(), rb.without_timing().to_toml());
    assert_eq!(fs::read(a.join("config.toml")).unwrap(), fs::read(b.join("config.toml")).unwrap());

    let cfg = tmp.path().join("det.toml");
    let out = muonlab(&["train", s(&cfg)], &r1);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn optimizer_pair_has_aligned_lattices_and_exports() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path().join("runs");
    let muon = train(&tmp, &root, "pair-muon", 4, "muon-1e-3");
    let adamw = train(&tmp, &root, "pair-adamw", 4, "adamw-3e-4");
    let lattice = |d: &Path| {
        RunRecord::load(d)
            .unwrap()
            .snapshots
            .iter()
            .map(|e| (e.step, e.family, e.depth, e.kind))
            .collect::<Vec<_>>()
    };
    assert_eq!(lattice(&muon), lattice(&adamw));

    // Against itself every ratio is one.
    let csv = tmp.path().join("self.csv");
    let out = muonlab(&["atlas", s(&muon), s(&muon), "--out", s(&csv)], &root);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let (header, rows) = parse_csv(&fs::read_to_string(&csv).unwrap());
    assert_eq!(header, ["family", "depth", "step", "ratio", "p"]);
    assert_eq!(rows.len(), 2 * 2 * 2);
    assert!(rows.iter().all(|r| r[3] == "1" && r[4] == "0.9"));

    let pgm = tmp.path().join("pair.pgm");
    let out = muonlab(
        &["atlas", s(&muon), s(&adamw), "--out", s(&tmp.path().join("pair.csv")), "--pgm", s(&pgm)],
        &root,
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let raster = fs::read(&pgm).unwrap();
    assert!(raster.starts_with(b"P5\n2 4\n255\n"));
    assert_eq!(raster.len(), b"P5\n2 4\n255\n".len() + 8);
    assert!(fs::read_to_string(tmp.path().join("pair.pgm.toml")).unwrap().contains("log2_max"));

    // Two runs give two labelled column groups with monotone medians.
    let curves = tmp.path().join("curves.csv");
    let out = muonlab(
        &["curves", s(&muon), s(&adamw), "--label", "muon", "--label", "adamw", "--grid", "20", "--out", s(&curves)],
        &root,
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let (header, rows) = parse_csv(&fs::read_to_string(&curves).unwrap());
    assert_eq!(
        header,
        ["mu", "muon.median", "muon.q25", "muon.q75", "adamw.median", "adamw.q25", "adamw.q75"]
    );
    assert_eq!(rows.len(), 20);
    for col in [1, 4] {
        let v: Vec<f64> = rows.iter().map(|r| r[col].parse().unwrap()).collect();
        assert!(v.windows(2).all(|w| w[0] <= w[1]), "{v:?}");
        assert_eq!(*v.last().unwrap(), 1.0);
    }
}

fn store_with(dir: &Path, run: &str, steps: &[u64], sigma: &[f64]) {
    let mut st = SnapshotStore::create(dir).unwrap();
    for &step in steps {
        let meta = SnapshotMeta {
            run_id: run.into(),
            step,
            family: BlockFamily::MlpDown,
            depth: 3,
            kind: SnapshotKind::Gradient,
        };
        st.append(&SpectrumSnapshot::new(meta, sigma.to_vec()).unwrap()).unwrap();
    }
}

#[test]
fn atlas_on_constructed_stores() {
    let tmp = TempDir::new().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    let mut spike = vec![0.0; 10];
    spike[0] = 1.0;
    store_with(&a, "a", &[10, 20], &[1.0; 10]);
    store_with(&b, "b", &[10, 20], &spike);
    store_with(&c, "c", &[30], &spike);
    let csv = tmp.path().join("nine.csv");
    let out = muonlab(&["atlas", s(&a), s(&b), "--out", s(&csv)], tmp.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let (_, rows) = parse_csv(&fs::read_to_string(&csv).unwrap());
    assert_eq!(rows.len(), 2);
    for r in rows {
        assert!((r[3].parse::<f64>().unwrap() - 9.0).abs() <= 1e-9);
    }
    let out = muonlab(&["atlas", s(&a), s(&c), "--out", s(&csv)], tmp.path());
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("lattice"), "{}", stderr(&out));
}

#[test]
fn curves_edge_cases() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a");
    store_with(&a, "a", &[5], &[3.0, 2.0, 1.0]);
    let out_csv = tmp.path().join("one.csv");
    let out = muonlab(&["curves", s(&a), "--grid", "6", "--out", s(&out_csv)], tmp.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let (header, rows) = parse_csv(&fs::read_to_string(&out_csv).unwrap());
    assert_eq!(header, ["mu", "a.median", "a.q25", "a.q75"]);
    assert!(rows.iter().all(|r| r[1] == r[2] && r[2] == r[3]));

    let out = muonlab(&["curves", s(&a), "--family", "qkv", "--out", s(&out_csv)], tmp.path());
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("empty"), "{}", stderr(&out));
}

#[test]
fn import_grad_records_and_errors() {
    let tmp = TempDir::new().unwrap();
    let store = tmp.path().join("store");
    let eye = tmp.path().join("eye.mlab");
    write_matrix_file(&eye, &Matrix::identity(4), Dtype::F64).unwrap();
    let base = ["--store", s(&store), "--run-id", "ext", "--step", "0", "--family", "qkv", "--depth", "0"];
    let mut args = vec!["import-grad", s(&eye)];
    args.extend(base);
    let out = muonlab(&args, tmp.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let snaps = SnapshotStore::load(&store).unwrap();
    assert_eq!(snaps.len(), 1);
    for v in snaps[0].sigma() {
        assert!((v - 1.0).abs() < 1e-12);
    }

    let files: Vec<PathBuf> = (0..10)
        .map(|i| {
            let p = tmp.path().join(format!("g{i}.mlab"));
            write_matrix_file(&p, &Matrix::from_fn(3, 5, |r, c| (r * 5 + c + i) as f64), Dtype::F32).unwrap();
            p
        })
        .collect();
    let batch = tmp.path().join("batch");
    let mut args = vec!["import-grad"];
    args.extend(files.iter().map(|p| s(p)));
    args.extend(["--store", s(&batch), "--run-id", "ext", "--step", "0", "--step-stride", "10"]);
    args.extend(["--family", "mlp_up", "--depth", "1"]);
    let out = muonlab(&args, tmp.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let snaps = SnapshotStore::load(&batch).unwrap();
    assert_eq!(snaps.len(), 10);
    assert_eq!(snaps[9].meta.step, 90);

    let bad = tmp.path().join("bad.mlab");
    let mut bytes = encode_matrix(&Matrix::identity(2), Dtype::F64).unwrap();
    bytes[0] = b'X';
    fs::write(&bad, bytes).unwrap();
    let mut args = vec!["import-grad", s(&bad)];
    args.extend(base);
    let out = muonlab(&args, tmp.path());
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("offset 0"), "{}", stderr(&out));
}

#[test]
fn verify_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let out = muonlab(&["verify", "--suite", "theory"], tmp.path());
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert!(stdout(&out).contains("muon_invariance_residual"));

    let file = write_file(
        tmp.path(),
        "broken.toml",
        "[broken]\ncoefficients = [[0.0, -4.775, 2.0315], [0.0, -4.775, 2.0315], [0.0, -4.775, 2.0315]]\n",
    );
    let out = muonlab(
        &["verify", "--suite", "polar", "--schedule", "broken", "--schedule-file", s(&file), "--matrices", "4"],
        tmp.path(),
    );
    assert_eq!(code(&out), 2, "{}", stdout(&out));
    assert!(stdout(&out).contains("iterate norms"));

    let out = muonlab(&["verify", "--suite", "nonsense"], tmp.path());
    assert_eq!(code(&out), 1);
}

#[test]
fn usage_and_config_errors_exit_one() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&muonlab(&["frobnicate"], tmp.path())), 1);
    assert_eq!(code(&muonlab(&["atlas", "a"], tmp.path())), 1);
    let cfg = write_file(tmp.path(), "bad.toml", &train_doc("bad", 2, "sgd-1"));
    let out = muonlab(&["train", s(&cfg)], tmp.path());
    assert_eq!(code(&out), 1, "{}", stderr(&out));
    let missing = muonlab(&["train", s(&tmp.path().join("nope.toml"))], tmp.path());
    assert_eq!(code(&missing), 3);
}
