use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use evc::cli::{run, HISTORY_FILE, METRICS_FILE, MODEL_FILE, PARTIAL_MARKER, PREDICTIONS_FILE};
use evc::dataset::{load_manifest, read_manifest, MANIFEST_FILE};
use evc::pool::WorkerPool;
use evc::results::{
    read_json, read_predictions, write_predictions, CompareReport, EvalReport, Prediction,
};
use evc_core::data::{generate_corpus, CorpusSpec};
use evc_core::exec::Serial;
use evc_core::model::{glorot_init, ArchitectureConfig};
use evc_core::Label;
use sha2::{Digest, Sha256};
use tempfile::TempDir;

fn evc(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_evc"))
        .args(args)
        .output()
        .expect("run evc")
}

fn code(args: &[&str]) -> i32 {
    evc(args).status.code().expect("exit code")
}

fn call(args: &[&str]) -> evc::CliResult<()> {
    run(&args.iter().map(|s| s.to_string()).collect::<Vec<_>>())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const MICRO: [&str; 4] = ["--data.source", "micro", "--architecture.input_size", "16"];

/// SHA-256 of every file below `dir`, keyed by relative path.
fn tree_digest(dir: &Path) -> BTreeMap<PathBuf, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let digest = Sha256::digest(std::fs::read(&p).unwrap());
                let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), hex);
            }
        }
    }
    out
}

fn gen_small(dir: &Path, seed: &str) {
    call(&[
        "gen-data",
        "--out",
        s(dir),
        "--architecture.input_size",
        "32",
        "--seed",
        seed,
    ])
    .unwrap();
}

#[test]
fn gen_data_is_byte_identical_for_a_seed() {
    let t = TempDir::new().unwrap();
    let (a, b, c) = (t.path().join("a"), t.path().join("b"), t.path().join("c"));
    gen_small(&a, "4");
    gen_small(&b, "4");
    gen_small(&c, "5");
    let (da, db, dc) = (tree_digest(&a), tree_digest(&b), tree_digest(&c));
    assert_eq!(da.len(), 122);
    assert_eq!(da, db);
    assert_ne!(
        da.get(Path::new("images/train_normal_000.pgm")),
        dc.get(Path::new("images/train_normal_000.pgm"))
    );
}

#[test]
fn manifest_round_trip_reproduces_tensors() {
    let t = TempDir::new().unwrap();
    gen_small(t.path(), "6");
    let loaded = load_manifest(&t.path().join(MANIFEST_FILE), 32, &Serial).unwrap();
    let spec = CorpusSpec {
        image_size: 32,
        master_seed: 6,
        ..Default::default()
    };
    let corpus = generate_corpus(&spec, &Serial).unwrap();
    assert_eq!(loaded.len(), corpus.samples.len());
    for (l, c) in loaded.iter().zip(&corpus.samples) {
        assert_eq!(l.id, c.id);
        assert_eq!(l.label, c.label);
        assert_eq!(l.institution, c.institution);
        assert_eq!(l.split, c.split);
        assert_eq!(l.image, c.image);
    }
    let rows = read_manifest(&t.path().join(MANIFEST_FILE)).unwrap();
    assert!(rows.iter().all(|r| r.path.starts_with("images/")));
}

#[test]
fn gen_data_refuses_nonempty_directory() {
    let t = TempDir::new().unwrap();
    std::fs::write(t.path().join("keep.txt"), "x").unwrap();
    let args = [
        "gen-data",
        "--out",
        s(t.path()),
        "--architecture.input_size",
        "16",
    ];
    assert_eq!(code(&args), 2);
    let mut forced = args.to_vec();
    forced.push("--force");
    assert_eq!(code(&forced), 0);
    assert!(t.path().join("keep.txt").exists());
    assert!(t.path().join(MANIFEST_FILE).exists());
}

#[test]
fn infeasible_corpus_is_a_config_error() {
    let t = TempDir::new().unwrap();
    let out = evc(&[
        "gen-data",
        "--out",
        s(&t.path().join("x")),
        "--data.n_institutions",
        "500",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("institutions"));
}

#[test]
fn exit_codes() {
    let t = TempDir::new().unwrap();
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["train", "--method", "dne", "--dne.bogus", "1"]), 2);
    assert_eq!(code(&["train", "--method", "dne", "--dne.sigma", "-1"]), 2);
    assert_eq!(code(&["frobnicate"]), 2);
    assert_eq!(
        code(&["compare", "--a", "x", "--b", "y", "--out", "z", "--seed", "1"]),
        2
    );
    let missing = t.path().join("missing.csv");
    let out_dir = t.path().join("o");
    let out = s(&out_dir);
    assert_eq!(
        code(&[
            "eval",
            "--model",
            "m.evc",
            "--manifest",
            s(&missing),
            "--out",
            out
        ]),
        3
    );

    let cfg = t.path().join("bad.txt");
    std::fs::write(&cfg, "[dne]\nsigma: int = 3\n").unwrap();
    assert_eq!(code(&["train", "--method", "dne", "--config", s(&cfg)]), 2);

    // a diverging plain-SGD run
    let mut args = vec![
        "train",
        "--method",
        "sgd",
        "--out",
        out,
        "--sgd.learning_rate",
        "1e30",
        "--sgd.epochs",
        "3",
    ];
    args.extend(MICRO);
    assert_eq!(code(&args), 4);
    assert!(t.path().join("o").join(PARTIAL_MARKER).exists());
}

#[test]
fn corrupt_model_and_empty_manifest() {
    let t = TempDir::new().unwrap();
    let data = t.path().join("d");
    call(&[
        "gen-data",
        "--out",
        s(&data),
        "--data.source",
        "micro",
        "--architecture.input_size",
        "16",
    ])
    .unwrap();
    let model = t.path().join("m.evc");
    std::fs::write(&model, b"EVC1 but not really").unwrap();
    let manifest = data.join(MANIFEST_FILE);
    let out = t.path().join("o");
    let mut args = vec![
        "eval",
        "--model",
        s(&model),
        "--manifest",
        s(&manifest),
        "--out",
        s(&out),
    ];
    args.extend(MICRO);
    assert_eq!(code(&args), 3);

    let good = t.path().join("good");
    dne_run(&good, "1", "1");
    let model = good.join(MODEL_FILE);
    let empty = t.path().join("empty.csv");
    std::fs::write(&empty, "id,path,label,institution,split\n").unwrap();
    let mut args = vec![
        "eval",
        "--model",
        s(&model),
        "--manifest",
        s(&empty),
        "--out",
        s(&out),
    ];
    args.extend(MICRO);
    assert_eq!(code(&args), 2);
}

#[test]
fn zero_epoch_training_saves_the_initial_network() {
    let t = TempDir::new().unwrap();
    let mut args = vec![
        "train",
        "--method",
        "adam",
        "--out",
        s(t.path()),
        "--sgd.epochs",
        "0",
        "--seed",
        "9",
    ];
    args.extend(MICRO);
    call(&args).unwrap();
    let arch = ArchitectureConfig::default().with_input_size(16);
    let bytes = std::fs::read(t.path().join(MODEL_FILE)).unwrap();
    assert_eq!(bytes, glorot_init(&arch, 9).unwrap().encode());
    let history = std::fs::read_to_string(t.path().join(HISTORY_FILE)).unwrap();
    assert_eq!(history.lines().count(), 1);
    assert!(!t.path().join(PARTIAL_MARKER).exists());
}

fn dne_run(dir: &Path, workers: &str, generations: &str) {
    let mut args = vec![
        "train",
        "--method",
        "dne",
        "--out",
        s(dir),
        "--workers",
        workers,
        "--dne.generations",
        generations,
        "--dne.population_size",
        "8",
        "--seed",
        "2",
    ];
    args.extend(MICRO);
    call(&args).unwrap();
}

/// History rows with the wall-clock column dropped.
fn history_without_time(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.rsplit_once(',').unwrap().0.to_string())
        .collect()
}

#[test]
fn dne_reruns_are_bit_identical_across_worker_counts() {
    let t = TempDir::new().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    dne_run(&a, "1", "6");
    dne_run(&b, "3", "6");
    for f in [MODEL_FILE, PREDICTIONS_FILE, METRICS_FILE] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let ha = history_without_time(&a.join(HISTORY_FILE));
    assert_eq!(ha, history_without_time(&b.join(HISTORY_FILE)));
    assert_eq!(ha.len(), 7);
    assert_eq!(ha[0], "generation,train_correct,train_acc,test_acc");
    for (i, row) in ha[1..].iter().enumerate() {
        assert!(row.starts_with(&format!("{},", i + 1)));
    }
}

#[test]
fn eval_agrees_with_training_predictions() {
    let t = TempDir::new().unwrap();
    let data = t.path().join("d");
    call(&[
        "gen-data",
        "--out",
        s(&data),
        "--data.source",
        "micro",
        "--architecture.input_size",
        "16",
        "--seed",
        "2",
    ])
    .unwrap();
    let run_dir = t.path().join("r");
    dne_run(&run_dir, "2", "3");
    let out = t.path().join("e");
    let manifest = data.join(MANIFEST_FILE);
    let model = run_dir.join(MODEL_FILE);
    let mut args = vec![
        "eval",
        "--model",
        s(&model),
        "--manifest",
        s(&manifest),
        "--out",
        s(&out),
        "--split",
        "test",
    ];
    args.extend(MICRO);
    call(&args).unwrap();
    assert_eq!(
        read_predictions(&out.join(PREDICTIONS_FILE)).unwrap(),
        read_predictions(&run_dir.join(PREDICTIONS_FILE)).unwrap()
    );
    let report: EvalReport = read_json(&out.join(METRICS_FILE)).unwrap();
    assert_eq!(report.overall.n, 20);
    assert_eq!(report.home.map(|h| h.n), Some(20));
    assert_eq!(report.outside, None);

    let all = t.path().join("all");
    let mut args = vec![
        "eval",
        "--model",
        s(&model),
        "--manifest",
        s(&manifest),
        "--out",
        s(&all),
    ];
    args.extend(MICRO);
    call(&args).unwrap();
    assert_eq!(
        read_predictions(&all.join(PREDICTIONS_FILE)).unwrap().len(),
        40
    );
}

fn preds(correct: &[bool]) -> Vec<Prediction> {
    correct
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let label = if i % 2 == 0 {
                Label::Normal
            } else {
                Label::Metastasis
            };
            let other = if c {
                label
            } else if label == Label::Normal {
                Label::Metastasis
            } else {
                Label::Normal
            };
            Prediction {
                sample_id: format!("s{i:02}"),
                label,
                pred: other,
            }
        })
        .collect()
}

#[test]
fn compare_constructed_discordance() {
    let t = TempDir::new().unwrap();
    let a: Vec<bool> = (0..60).map(|i| i < 50).collect();
    let b: Vec<bool> = (0..60).map(|i| i < 30 || i == 55).collect();
    let (pa, pb) = (t.path().join("a.csv"), t.path().join("b.csv"));
    write_predictions(&pa, &preds(&a)).unwrap();
    let mut shuffled = preds(&b);
    shuffled.reverse();
    shuffled.swap(3, 40);
    write_predictions(&pb, &shuffled).unwrap();
    let out = t.path().join("cmp.json");
    call(&["compare", "--a", s(&pa), "--b", s(&pb), "--out", s(&out)]).unwrap();
    let r: CompareReport = read_json(&out).unwrap();
    assert_eq!((r.overall.b, r.overall.c), (20, 1));
    assert!((r.overall.p_exact - 44.0 / 2097152.0).abs() < 1e-12);
    assert_eq!(r.n, 60);
    assert_eq!(r.a.accuracy, Some(50.0 / 60.0));

    call(&["compare", "--a", s(&pa), "--b", s(&pa), "--out", s(&out)]).unwrap();
    let r: CompareReport = read_json(&out).unwrap();
    assert_eq!((r.overall.b, r.overall.c, r.overall.p_exact), (0, 0, 1.0));
}

#[test]
fn compare_rejects_mismatched_ids() {
    let t = TempDir::new().unwrap();
    let (pa, pb) = (t.path().join("a.csv"), t.path().join("b.csv"));
    write_predictions(&pa, &preds(&[true, false, true])).unwrap();
    write_predictions(&pb, &preds(&[true, false])).unwrap();
    let out = evc(&[
        "compare",
        "--a",
        s(&pa),
        "--b",
        s(&pb),
        "--out",
        s(&t.path().join("c.json")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("s02"));
}

#[test]
fn saliency_outputs_and_unknown_id() {
    let t = TempDir::new().unwrap();
    let data = t.path().join("d");
    call(&[
        "gen-data",
        "--out",
        s(&data),
        "--data.source",
        "micro",
        "--architecture.input_size",
        "16",
    ])
    .unwrap();
    let run_dir = t.path().join("r");
    dne_run(&run_dir, "1", "2");
    let manifest = data.join(MANIFEST_FILE);
    let model = run_dir.join(MODEL_FILE);
    let out = t.path().join("s");
    let mut args = vec![
        "saliency",
        "--model",
        s(&model),
        "--manifest",
        s(&manifest),
        "--ids",
        "micro_test_01,micro_test_02",
        "--out",
        s(&out),
        "--saliency.patch",
        "4",
        "--saliency.stride",
        "4",
    ];
    args.extend(MICRO);
    call(&args).unwrap();
    for f in [
        "micro_test_01.png",
        "micro_test_02.png",
        "micro_test_01_grid.csv",
        "saliency.csv",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let grid = std::fs::read_to_string(out.join("micro_test_01_grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 1 + 16);
    let first = std::fs::read(out.join("micro_test_01.png")).unwrap();
    call(&args).unwrap();
    assert_eq!(first, std::fs::read(out.join("micro_test_01.png")).unwrap());

    args[6] = "micro_test_01,nope";
    let status = evc(&args);
    assert_eq!(status.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&status.stderr).contains("nope"));
}

#[test]
fn report_summarizes_histories() {
    let t = TempDir::new().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    dne_run(&a, "1", "4");
    let mut args = vec![
        "train",
        "--method",
        "adam",
        "--out",
        s(&b),
        "--sgd.epochs",
        "3",
    ];
    args.extend(MICRO);
    call(&args).unwrap();
    let out = t.path().join("summary.csv");
    let curves = t.path().join("curves.csv");
    call(&[
        "report",
        s(&a.join(HISTORY_FILE)),
        s(&b.join(HISTORY_FILE)),
        "--out",
        s(&out),
        "--curves",
        s(&curves),
    ])
    .unwrap();
    let summary = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].contains(",dne,4,"));
    assert!(lines[2].contains(",sgd,3,"));
    assert_eq!(
        std::fs::read_to_string(&curves).unwrap().lines().count(),
        1 + 4 + 3
    );
}

#[test]
fn worker_pool_matches_serial_generation() {
    let spec = CorpusSpec {
        image_size: 16,
        master_seed: 3,
        ..Default::default()
    };
    assert_eq!(
        generate_corpus(&spec, &WorkerPool::new(4)).unwrap(),
        generate_corpus(&spec, &Serial).unwrap()
    );
}
