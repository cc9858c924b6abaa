//! Subcommands of the `evc` binary.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use evc_core::data::{
    generate_corpus, mean_intensity, micro_dataset, Corpus, LabeledSample, Split, HOME_TAG,
    MICRO_SIZE,
};
use evc_core::dne::train_dne;
use evc_core::model::ModelParams;
use evc_core::saliency::{occlusion_map, Fill, OcclusionConfig};
use evc_core::sgd::{train_sgd, OptimizerKind};
use evc_core::Label;

use crate::config::{key_type, DataSource, RunConfig, Settings};
use crate::dataset::{load_manifest, read_manifest, write_corpus, GroundTruth};
use crate::error::{CliError, CliResult};
use crate::heatmap::{render_heatmap, write_grid_csv, HeatmapFormat};
use crate::history::{read_history, HistoryWriter};
use crate::imageio::write_file;
use crate::model_file::{load_model, save_model};
use crate::pool::{WallClock, WorkerPool};
use crate::results::{
    compare, eval_report, read_predictions, write_json, write_predictions, Prediction,
};

pub const MODEL_FILE: &str = "model.evc";
pub const HISTORY_FILE: &str = "history.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const CONFIG_FILE: &str = "config.txt";
pub const PARTIAL_MARKER: &str = ".partial";

const OVERRIDE_HELP: &str = "\
Any configuration key can be given as a flag: --seed 3, --workers 4,
--dne.sigma 0.05, --architecture.input_size 64, --data.manifest m.csv ...
Flags override the --config file.";

#[derive(Parser, Debug)]
#[command(name = "evc", version, about = "Neuroevolution vs gradient training of a small CNN on lesion classification", after_help = OVERRIDE_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Dne,
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitChoice {
    All,
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TargetChoice {
    Predicted,
    Normal,
    Metastasis,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic corpus: images, manifest.csv, ground_truth.json.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (defaults to output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write into a nonempty directory.
        #[arg(long)]
        force: bool,
    },
    /// Train a model and write model, history, predictions and metrics.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        method: Method,
        /// Output directory (defaults to output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict every manifest row and score overall, home and outside subsets.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        split: SplitChoice,
        #[arg(long, default_value = HOME_TAG)]
        home_tag: String,
    },
    /// Paired McNemar comparison of two predictions files.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Report JSON path.
        #[arg(long)]
        out: PathBuf,
        /// Manifest giving institution tags for the outside-only test.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value = HOME_TAG)]
        home_tag: String,
    },
    /// Occlusion saliency heatmaps for chosen samples.
    Saliency {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Comma-separated sample ids.
        #[arg(long, value_delimiter = ',', required = true)]
        ids: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "predicted")]
        target: TargetChoice,
        #[arg(long, default_value = "png")]
        format: String,
        /// Lesion annotations; adds a hit column to the summary.
        #[arg(long)]
        ground_truth: Option<PathBuf>,
    },
    /// Summarize history CSVs into one table.
    Report {
        histories: Vec<PathBuf>,
        /// Summary CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Optional long-format CSV of every step of every run.
        #[arg(long)]
        curves: Option<PathBuf>,
    },
}

/// `(key, value)` pairs taken from `--section.key value` flags.
type Overrides = Vec<(String, String)>;

/// Splits configuration-key flags from the rest of the arguments.
fn split_overrides(args: &[String]) -> CliResult<(Vec<String>, Overrides)> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            rest.push(arg.clone());
            continue;
        };
        let (name, inline) = match flag.split_once('=') {
            Some((n, v)) => (n, Some(v.to_string())),
            None => (flag, None),
        };
        if key_type(name).is_none() {
            if name.contains('.') {
                return Err(CliError::config(format!(
                    "unknown configuration key --{name}"
                )));
            }
            rest.push(arg.clone());
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it
                .next()
                .cloned()
                .ok_or_else(|| CliError::config(format!("--{name} needs a value")))?,
        };
        overrides.push((name.to_string(), value));
    }
    Ok((rest, overrides))
}

fn resolve_config(path: Option<&Path>, overrides: &[(String, String)]) -> CliResult<RunConfig> {
    let mut settings = match path {
        Some(p) => Settings::read(p)?,
        None => Settings::default(),
    };
    for (k, v) in overrides {
        settings.set(k, v)?;
    }
    RunConfig::from_settings(&settings)
}

/// Entry point shared by the binary and tests; `args` excludes the
/// program name.
pub fn run(args: &[String]) -> CliResult<()> {
    let (rest, overrides) = split_overrides(args)?;
    let argv = std::iter::once(OsString::from("evc")).chain(rest.iter().map(OsString::from));
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e)
            if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) =>
        {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(CliError::config(e.to_string())),
    };
    let needs_config = matches!(
        cli.command,
        Command::GenData { .. }
            | Command::Train { .. }
            | Command::Eval { .. }
            | Command::Saliency { .. }
    );
    if !needs_config && !overrides.is_empty() {
        return Err(CliError::config(format!(
            "--{} is not used by this command",
            overrides[0].0
        )));
    }
    match cli.command {
        Command::GenData { config, out, force } => {
            let cfg = resolve_config(config.as_deref(), &overrides)?;
            cmd_gen_data(&cfg, out.as_deref(), force)
        }
        Command::Train {
            config,
            method,
            out,
        } => {
            let cfg = resolve_config(config.as_deref(), &overrides)?;
            cmd_train(&cfg, method, out.as_deref())
        }
        Command::Eval {
            config,
            model,
            manifest,
            out,
            split,
            home_tag,
        } => {
            let cfg = resolve_config(config.as_deref(), &overrides)?;
            cmd_eval(&cfg, &model, &manifest, &out, split, &home_tag)
        }
        Command::Compare {
            a,
            b,
            out,
            manifest,
            home_tag,
        } => cmd_compare(&a, &b, &out, manifest.as_deref(), &home_tag),
        Command::Saliency {
            config,
            model,
            manifest,
            ids,
            out,
            target,
            format,
            ground_truth,
        } => {
            let cfg = resolve_config(config.as_deref(), &overrides)?;
            let format = HeatmapFormat::parse(&format).ok_or_else(|| {
                CliError::config(format!("--format must be png or pgm, got {format:?}"))
            })?;
            cmd_saliency(
                &cfg,
                &model,
                &manifest,
                &ids,
                &out,
                target,
                format,
                ground_truth.as_deref(),
            )
        }
        Command::Report {
            histories,
            out,
            curves,
        } => cmd_report(&histories, &out, curves.as_deref()),
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn cmd_gen_data(cfg: &RunConfig, out: Option<&Path>, force: bool) -> CliResult<()> {
    let dir = out.unwrap_or(&cfg.output_dir);
    if !force {
        if let Ok(mut entries) = std::fs::read_dir(dir) {
            if entries.next().is_some() {
                return Err(CliError::config(format!(
                    "{} exists and is not empty; pass --force to write into it",
                    dir.display()
                )));
            }
        }
    }
    let pool = WorkerPool::new(cfg.workers);
    let corpus = match &cfg.data {
        DataSource::Generate(spec) => generate_corpus(spec, &pool)?,
        DataSource::Micro { seed } => micro_corpus(*seed),
        DataSource::Manifest { .. } => {
            return Err(CliError::config(
                "gen-data needs data.source = generate or micro",
            ));
        }
    };
    create_dir(dir)?;
    write_corpus(&corpus, dir)?;
    eprintln!("wrote {} images to {}", corpus.samples.len(), dir.display());
    Ok(())
}

fn micro_corpus(seed: u64) -> Corpus {
    let (train, test) = micro_dataset(seed);
    Corpus {
        samples: train.into_iter().chain(test).collect(),
        institutions: Vec::new(),
        image_size: MICRO_SIZE,
        master_seed: seed,
    }
}

/// Training and test samples named by the configured data source.
pub fn load_data(
    cfg: &RunConfig,
    pool: &WorkerPool,
) -> CliResult<(Vec<LabeledSample>, Vec<LabeledSample>)> {
    let samples = match &cfg.data {
        DataSource::Generate(spec) => generate_corpus(spec, pool)?.samples,
        DataSource::Micro { seed } => micro_corpus(*seed).samples,
        DataSource::Manifest { path, ground_truth } => {
            let mut samples = load_manifest(path, cfg.architecture.input_size, pool)?;
            if let Some(gt) = ground_truth {
                GroundTruth::read(gt)?.annotate(&mut samples);
            }
            samples
        }
    };
    let (train, test): (Vec<_>, Vec<_>) =
        samples.into_iter().partition(|s| s.split == Split::Train);
    if train.is_empty() || test.is_empty() {
        return Err(CliError::config(format!(
            "need both training and test samples, got {} and {}",
            train.len(),
            test.len()
        )));
    }
    Ok((train, test))
}

/// Predictions of `params` for `samples`, evaluated in parallel.
pub fn predict_all(
    params: &ModelParams,
    samples: &[LabeledSample],
    pool: &WorkerPool,
) -> CliResult<Vec<Prediction>> {
    use evc_core::exec::Executor;
    let preds = pool.map(samples.len(), |i| params.predict(&samples[i].image));
    samples
        .iter()
        .zip(preds)
        .map(|(s, p)| {
            Ok(Prediction {
                sample_id: s.id.clone(),
                label: s.label,
                pred: p?,
            })
        })
        .collect()
}

fn write_eval(
    dir: &Path,
    preds: &[Prediction],
    samples: &[LabeledSample],
    home_tag: &str,
) -> CliResult<()> {
    let home: Vec<bool> = samples.iter().map(|s| s.institution == home_tag).collect();
    write_predictions(&dir.join(PREDICTIONS_FILE), preds)?;
    write_json(&dir.join(METRICS_FILE), &eval_report(preds, &home)?)
}

fn cmd_train(cfg: &RunConfig, method: Method, out: Option<&Path>) -> CliResult<()> {
    let mut cfg = cfg.clone();
    match method {
        Method::Sgd => cfg.sgd.optimizer = OptimizerKind::Sgd,
        Method::Adam => cfg.sgd.optimizer = OptimizerKind::Adam,
        Method::Dne => {}
    }
    let pool = WorkerPool::new(cfg.workers);
    let (train, test) = load_data(&cfg, &pool)?;
    let dir = out.unwrap_or(&cfg.output_dir).to_path_buf();
    create_dir(&dir)?;
    let marker = dir.join(PARTIAL_MARKER);
    write_file(&marker, b"training in progress or failed\n")?;
    write_file(&dir.join(CONFIG_FILE), cfg.to_text().as_bytes())?;
    let clock = WallClock::start();
    let history_path = dir.join(HISTORY_FILE);
    let mut write_err: Option<CliError> = None;
    let params = match method {
        Method::Dne => {
            let mut history = HistoryWriter::dne(&history_path)?;
            let (params, _) = train_dne(
                &cfg.architecture,
                &cfg.dne,
                &train,
                &test,
                &pool,
                &clock,
                |r| {
                    eprintln!(
                        "generation {} train {}/{} test {}",
                        r.generation,
                        r.train_correct,
                        train.len(),
                        r.test_accuracy
                            .map(|v| format!("{v:.4}"))
                            .unwrap_or_else(|| "-".into())
                    );
                    if let Err(e) = history.generation(r) {
                        write_err.get_or_insert(e);
                    }
                },
            )?;
            params
        }
        Method::Sgd | Method::Adam => {
            let mut history = HistoryWriter::sgd(&history_path)?;
            let (params, _) = train_sgd(&cfg.architecture, &cfg.sgd, &train, &test, &clock, |r| {
                eprintln!(
                    "epoch {} loss {:.5} train {:.4} test {:.4} lr {:e}",
                    r.epoch, r.train_loss, r.train_accuracy, r.test_accuracy, r.lr
                );
                if let Err(e) = history.epoch(r) {
                    write_err.get_or_insert(e);
                }
            })?;
            params
        }
    };
    if let Some(e) = write_err {
        return Err(e);
    }
    save_model(&dir.join(MODEL_FILE), &params)?;
    let preds = predict_all(&params, &test, &pool)?;
    write_eval(&dir, &preds, &test, HOME_TAG)?;
    std::fs::remove_file(&marker).map_err(|e| CliError::io(&marker, e))?;
    Ok(())
}

fn select_split(samples: Vec<LabeledSample>, split: SplitChoice) -> Vec<LabeledSample> {
    match split {
        SplitChoice::All => samples,
        SplitChoice::Train => samples
            .into_iter()
            .filter(|s| s.split == Split::Train)
            .collect(),
        SplitChoice::Test => samples
            .into_iter()
            .filter(|s| s.split == Split::Test)
            .collect(),
    }
}

fn cmd_eval(
    cfg: &RunConfig,
    model: &Path,
    manifest: &Path,
    out: &Path,
    split: SplitChoice,
    home_tag: &str,
) -> CliResult<()> {
    let pool = WorkerPool::new(cfg.workers);
    let params = load_model(model, &cfg.architecture)?;
    let samples = select_split(
        load_manifest(manifest, cfg.architecture.input_size, &pool)?,
        split,
    );
    if samples.is_empty() {
        return Err(CliError::config("no manifest rows in the selected split"));
    }
    let preds = predict_all(&params, &samples, &pool)?;
    create_dir(out)?;
    write_eval(out, &preds, &samples, home_tag)
}

fn cmd_compare(
    a: &Path,
    b: &Path,
    out: &Path,
    manifest: Option<&Path>,
    home_tag: &str,
) -> CliResult<()> {
    let pa = read_predictions(a)?;
    let pb = read_predictions(b)?;
    let tags = match manifest {
        Some(m) => Some(
            read_manifest(m)?
                .into_iter()
                .map(|r| (r.id, r.institution))
                .collect::<BTreeMap<_, _>>(),
        ),
        None => None,
    };
    let report = compare(&pa, &pb, tags.as_ref(), home_tag)?;
    write_json(out, &report)
}

#[allow(clippy::too_many_arguments)]
fn cmd_saliency(
    cfg: &RunConfig,
    model: &Path,
    manifest: &Path,
    ids: &[String],
    out: &Path,
    target: TargetChoice,
    format: HeatmapFormat,
    ground_truth: Option<&Path>,
) -> CliResult<()> {
    let pool = WorkerPool::new(cfg.workers);
    let params = load_model(model, &cfg.architecture)?;
    let mut samples = load_manifest(manifest, cfg.architecture.input_size, &pool)?;
    let annotated = match ground_truth {
        Some(gt) => {
            GroundTruth::read(gt)?.annotate(&mut samples);
            true
        }
        None => false,
    };
    let fill = match cfg.saliency.fill {
        Fill::Zero => Fill::Zero,
        Fill::Mean(_) => {
            let train: Vec<LabeledSample> = samples
                .iter()
                .filter(|s| s.split == Split::Train)
                .cloned()
                .collect();
            Fill::Mean(mean_intensity(if train.is_empty() {
                &samples
            } else {
                &train
            }))
        }
    };
    let occ = OcclusionConfig {
        fill,
        ..cfg.saliency
    };
    let mut chosen = Vec::with_capacity(ids.len());
    for id in ids {
        let s = samples
            .iter()
            .find(|s| &s.id == id)
            .ok_or_else(|| CliError::config(format!("unknown sample id {id}")))?;
        chosen.push(s);
    }
    create_dir(out)?;
    let mut summary = csv::Writer::from_path(out.join("saliency.csv"))?;
    summary.write_record([
        "sample_id",
        "label",
        "pred",
        "target",
        "argmax_row",
        "argmax_col",
        "x0",
        "y0",
        "patch",
        "max_drop",
        "lesion_hit",
    ])?;
    for s in chosen {
        let pred = params.predict(&s.image)?;
        let target = match target {
            TargetChoice::Predicted => pred,
            TargetChoice::Normal => Label::Normal,
            TargetChoice::Metastasis => Label::Metastasis,
        };
        let map = occlusion_map(&params, &s.image, target, &occ, &pool)?;
        let stem = out.join(&s.id);
        render_heatmap(
            &map,
            s.image.data(),
            format,
            &stem.with_extension(format.extension()),
        )?;
        write_grid_csv(&map, &out.join(format!("{}_grid.csv", s.id)))?;
        let (row, col) = map.argmax_cell();
        let (x0, y0, size) = map.cell_rect(row, col);
        let max_drop = map.grid.data().iter().cloned().fold(0.0f32, f32::max);
        let hit = if annotated && !s.lesions.is_empty() {
            s.lesions
                .iter()
                .any(|l| l.overlaps_rect(x0 as f32, y0 as f32, size as f32, size as f32))
                .to_string()
        } else {
            String::new()
        };
        summary.write_record([
            s.id.clone(),
            s.label.token().into(),
            pred.token().into(),
            target.token().into(),
            row.to_string(),
            col.to_string(),
            x0.to_string(),
            y0.to_string(),
            size.to_string(),
            max_drop.to_string(),
            hit,
        ])?;
    }
    summary.flush().map_err(|e| CliError::io(out, e))
}

fn cmd_report(histories: &[PathBuf], out: &Path, curves: Option<&Path>) -> CliResult<()> {
    if histories.is_empty() {
        return Err(CliError::config("report needs at least one history CSV"));
    }
    let loaded = histories
        .iter()
        .map(|p| read_history(p))
        .collect::<CliResult<Vec<_>>>()?;
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut w = csv::Writer::from_path(out)
        .map_err(|e| CliError::data(format!("{}: {e}", out.display())))?;
    w.write_record([
        "run",
        "method",
        "steps",
        "final_train_acc",
        "final_test_acc",
        "best_test_acc",
        "best_test_step",
    ])?;
    for (path, h) in histories.iter().zip(&loaded) {
        let last = h.points.last();
        let last_test = h.points.iter().rev().find_map(|p| p.test_accuracy);
        let best = h
            .points
            .iter()
            .filter_map(|p| p.test_accuracy.map(|t| (t, p.step)))
            .fold(None, |acc: Option<(f64, usize)>, (t, s)| match acc {
                Some((bt, _)) if bt >= t => acc,
                _ => Some((t, s)),
            });
        w.write_record([
            path.display().to_string(),
            h.kind.token().to_string(),
            h.points.len().to_string(),
            fmt(last.map(|p| p.train_accuracy)),
            fmt(last_test),
            fmt(best.map(|b| b.0)),
            best.map(|b| b.1.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| CliError::io(out, e))?;
    if let Some(curves) = curves {
        let mut w = csv::Writer::from_path(curves)
            .map_err(|e| CliError::data(format!("{}: {e}", curves.display())))?;
        w.write_record(["run", "method", "step", "train_acc", "test_acc"])?;
        for (path, h) in histories.iter().zip(&loaded) {
            for p in &h.points {
                w.write_record([
                    path.display().to_string(),
                    h.kind.token().to_string(),
                    p.step.to_string(),
                    p.train_accuracy.to_string(),
                    fmt(p.test_accuracy),
                ])?;
            }
        }
        w.flush().map_err(|e| CliError::io(curves, e))?;
    }
    Ok(())
}
