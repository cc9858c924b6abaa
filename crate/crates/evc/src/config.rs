//! Run configuration: a sectioned `key: type = value` text format.
//!
//! ```text
//! # comment
//! seed: int = 7
//! output_dir: str = runs/a
//!
//! [dne]
//! sigma: float = 0.02
//! ```
//!
//! Keys before any section header are top-level. Every key can also be set
//! on the command line as `--section.key value` (or `--key value` for
//! top-level keys); those overrides win over the file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use evc_core::data::{CorpusSpec, OutsideAllocation, OutsideCounts, MICRO_SIZE};
use evc_core::dne::DneConfig;
use evc_core::model::ArchitectureConfig;
use evc_core::saliency::{Fill, OcclusionConfig};
use evc_core::sgd::{OptimizerKind, PlateauConfig, SgdConfig};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueType {
    Int,
    Float,
    Str,
    Bool,
    Ints,
}

impl ValueType {
    fn token(self) -> &'static str {
        match self {
            ValueType::Int => "int",
            ValueType::Float => "float",
            ValueType::Str => "str",
            ValueType::Bool => "bool",
            ValueType::Ints => "ints",
        }
    }

    fn parse_token(t: &str) -> Option<Self> {
        Some(match t {
            "int" => ValueType::Int,
            "float" => ValueType::Float,
            "str" => ValueType::Str,
            "bool" => ValueType::Bool,
            "ints" => ValueType::Ints,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Int(u64),
    Float(f64),
    Str(String),
    Bool(bool),
    Ints(Vec<u64>),
}

impl Value {
    pub fn parse(ty: ValueType, raw: &str) -> Result<Value, String> {
        let raw = raw.trim();
        let int = |s: &str| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| format!("expected a nonnegative integer, got {s:?}"))
        };
        Ok(match ty {
            ValueType::Int => Value::Int(int(raw)?),
            ValueType::Float => {
                let v: f64 = raw
                    .parse()
                    .map_err(|_| format!("expected a number, got {raw:?}"))?;
                if !v.is_finite() {
                    return Err(format!("expected a finite number, got {raw:?}"));
                }
                Value::Float(v)
            }
            ValueType::Bool => match raw {
                "true" => Value::Bool(true),
                "false" => Value::Bool(false),
                _ => return Err(format!("expected true or false, got {raw:?}")),
            },
            ValueType::Str => {
                let unquoted = raw
                    .strip_prefix('"')
                    .and_then(|s| s.strip_suffix('"'))
                    .unwrap_or(raw);
                Value::Str(unquoted.to_string())
            }
            ValueType::Ints => {
                if raw.is_empty() {
                    Value::Ints(Vec::new())
                } else {
                    Value::Ints(raw.split(',').map(int).collect::<Result<_, _>>()?)
                }
            }
        })
    }

    fn render(&self) -> String {
        match self {
            Value::Int(v) => v.to_string(),
            Value::Float(v) => format!("{v:?}"),
            Value::Str(s) if s.is_empty() || s.trim() != s => format!("\"{s}\""),
            Value::Str(s) => s.clone(),
            Value::Bool(b) => b.to_string(),
            Value::Ints(v) => v.iter().map(u64::to_string).collect::<Vec<_>>().join(","),
        }
    }
}

/// Every recognised key with its type, in file order.
pub const KEYS: &[(&str, ValueType)] = &[
    ("seed", ValueType::Int),
    ("output_dir", ValueType::Str),
    ("workers", ValueType::Int),
    ("architecture.input_size", ValueType::Int),
    ("architecture.conv_layers", ValueType::Int),
    ("architecture.channels_per_layer", ValueType::Int),
    ("architecture.kernel", ValueType::Int),
    ("architecture.stride", ValueType::Int),
    ("architecture.pad", ValueType::Int),
    ("architecture.fc_sizes", ValueType::Ints),
    ("architecture.num_classes", ValueType::Int),
    ("data.source", ValueType::Str),
    ("data.manifest", ValueType::Str),
    ("data.ground_truth", ValueType::Str),
    ("data.seed", ValueType::Int),
    ("data.n_train_normal", ValueType::Int),
    ("data.n_train_metastasis", ValueType::Int),
    ("data.n_test_normal", ValueType::Int),
    ("data.n_test_metastasis", ValueType::Int),
    ("data.n_institutions", ValueType::Int),
    ("data.outside_fraction_train", ValueType::Float),
    ("data.outside_fraction_test", ValueType::Float),
    ("data.allocation", ValueType::Str),
    ("data.outside_train_normal", ValueType::Int),
    ("data.outside_train_metastasis", ValueType::Int),
    ("data.outside_test_normal", ValueType::Int),
    ("data.outside_test_metastasis", ValueType::Int),
    ("dne.seed", ValueType::Int),
    ("dne.population_size", ValueType::Int),
    ("dne.sigma", ValueType::Float),
    ("dne.eta", ValueType::Float),
    ("dne.generations", ValueType::Int),
    ("dne.eval_test_every", ValueType::Int),
    ("sgd.seed", ValueType::Int),
    ("sgd.optimizer", ValueType::Str),
    ("sgd.learning_rate", ValueType::Float),
    ("sgd.batch_size", ValueType::Int),
    ("sgd.epochs", ValueType::Int),
    ("sgd.plateau", ValueType::Bool),
    ("sgd.plateau_factor", ValueType::Float),
    ("sgd.plateau_patience", ValueType::Int),
    ("sgd.plateau_min_lr", ValueType::Float),
    ("sgd.plateau_threshold", ValueType::Float),
    ("saliency.patch", ValueType::Int),
    ("saliency.stride", ValueType::Int),
    ("saliency.fill", ValueType::Str),
];

pub fn key_type(key: &str) -> Option<ValueType> {
    KEYS.iter().find(|(k, _)| *k == key).map(|&(_, t)| t)
}

/// Explicitly set keys, from a file and/or overrides.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, Value>,
}

impl Settings {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut settings = Settings::default();
        let mut section = String::new();
        for (n, line) in text.lines().enumerate() {
            let err = |msg: String| CliError::config(format!("line {}: {msg}", n + 1));
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| err(format!("unterminated section header {line:?}")))?
                    .trim();
                if !KEYS.iter().any(|(k, _)| k.starts_with(&format!("{name}."))) {
                    return Err(err(format!("unknown section [{name}]")));
                }
                section = name.to_string();
                continue;
            }
            let (decl, raw) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key: type = value`, got {line:?}")))?;
            let (key, ty) = decl
                .split_once(':')
                .ok_or_else(|| err(format!("missing `: type` in {line:?}")))?;
            let (key, ty) = (key.trim(), ty.trim());
            let full = if section.is_empty() {
                key.to_string()
            } else {
                format!("{section}.{key}")
            };
            let declared =
                ValueType::parse_token(ty).ok_or_else(|| err(format!("unknown type {ty:?}")))?;
            let expected = key_type(&full).ok_or_else(|| err(format!("unknown key {full}")))?;
            if declared != expected {
                return Err(err(format!(
                    "{full} has type {}, declared {}",
                    expected.token(),
                    declared.token()
                )));
            }
            if settings.values.contains_key(&full) {
                return Err(err(format!("{full} set twice")));
            }
            let value = Value::parse(declared, raw).map_err(|m| err(format!("{full}: {m}")))?;
            settings.values.insert(full, value);
        }
        Ok(settings)
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| e.context(path.display()))
    }

    /// Sets `key` from a command-line string, typed by the schema.
    pub fn set(&mut self, key: &str, raw: &str) -> CliResult<()> {
        let ty =
            key_type(key).ok_or_else(|| CliError::config(format!("unknown option --{key}")))?;
        let value = Value::parse(ty, raw).map_err(|m| CliError::config(format!("--{key}: {m}")))?;
        self.values.insert(key.to_string(), value);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.values.get(key)
    }

    fn int(&self, key: &str, default: u64) -> u64 {
        match self.values.get(key) {
            Some(Value::Int(v)) => *v,
            _ => default,
        }
    }

    fn usize(&self, key: &str, default: usize) -> CliResult<usize> {
        usize::try_from(self.int(key, default as u64))
            .map_err(|_| CliError::config(format!("{key} is too large")))
    }

    fn float(&self, key: &str, default: f64) -> f64 {
        match self.values.get(key) {
            Some(Value::Float(v)) => *v,
            _ => default,
        }
    }

    fn string(&self, key: &str, default: &str) -> String {
        match self.values.get(key) {
            Some(Value::Str(v)) => v.clone(),
            _ => default.to_string(),
        }
    }

    fn boolean(&self, key: &str, default: bool) -> bool {
        match self.values.get(key) {
            Some(Value::Bool(v)) => *v,
            _ => default,
        }
    }

    fn ints(&self, key: &str, default: &[usize]) -> Vec<usize> {
        match self.values.get(key) {
            Some(Value::Ints(v)) => v.iter().map(|&x| x as usize).collect(),
            _ => default.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Generate(CorpusSpec),
    /// The 16-pixel separable sanity benchmark.
    Micro {
        seed: u64,
    },
    Manifest {
        path: PathBuf,
        /// Sidecar with lesion annotations, if any.
        ground_truth: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub workers: usize,
    pub architecture: ArchitectureConfig,
    pub data: DataSource,
    pub dne: DneConfig,
    pub sgd: SgdConfig,
    /// `Fill::Mean` carries a placeholder; the value is taken from the
    /// training images when maps are rendered.
    pub saliency: OcclusionConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::from_settings(&Settings::default()).expect("defaults are valid")
    }
}

/// Shortest decimal that reads back as `v`, widened.
fn widen(v: f32) -> f64 {
    v.to_string().parse().unwrap_or(v as f64)
}

impl RunConfig {
    /// Resolves settings against defaults. Data, DNE and SGD seeds default
    /// to the top-level seed.
    pub fn from_settings(s: &Settings) -> CliResult<Self> {
        let seed = s.int("seed", 0);
        let arch_default = ArchitectureConfig::default();
        let architecture = ArchitectureConfig {
            input_size: s.usize("architecture.input_size", arch_default.input_size)?,
            conv_layers: s.usize("architecture.conv_layers", arch_default.conv_layers)?,
            channels_per_layer: s.usize(
                "architecture.channels_per_layer",
                arch_default.channels_per_layer,
            )?,
            kernel: s.usize("architecture.kernel", arch_default.kernel)?,
            stride: s.usize("architecture.stride", arch_default.stride)?,
            pad: s.usize("architecture.pad", arch_default.pad)?,
            fc_sizes: s.ints("architecture.fc_sizes", &arch_default.fc_sizes),
            num_classes: s.usize("architecture.num_classes", arch_default.num_classes)?,
        };
        architecture.validate()?;

        let data = match s.string("data.source", "generate").as_str() {
            "generate" => {
                if !s.string("data.manifest", "").is_empty() {
                    return Err(CliError::config(
                        "data.manifest is set but data.source is generate",
                    ));
                }
                DataSource::Generate(corpus_spec(s, seed, architecture.input_size)?)
            }
            "manifest" => {
                let path = s.string("data.manifest", "");
                if path.is_empty() {
                    return Err(CliError::config(
                        "data.source is manifest but data.manifest is empty",
                    ));
                }
                let gt = s.string("data.ground_truth", "");
                DataSource::Manifest {
                    path: PathBuf::from(path),
                    ground_truth: (!gt.is_empty()).then(|| PathBuf::from(gt)),
                }
            }
            "micro" => {
                if architecture.input_size != MICRO_SIZE {
                    return Err(CliError::config(format!(
                        "data.source micro needs architecture.input_size = {MICRO_SIZE}, got {}",
                        architecture.input_size
                    )));
                }
                DataSource::Micro {
                    seed: s.int("data.seed", seed),
                }
            }
            other => {
                return Err(CliError::config(format!(
                    "data.source must be generate, manifest or micro, got {other:?}"
                )))
            }
        };

        let dd = DneConfig::default();
        let dne = DneConfig {
            population_size: s.usize("dne.population_size", dd.population_size)?,
            sigma: s.float("dne.sigma", dd.sigma as f64) as f32,
            eta: s.float("dne.eta", dd.eta as f64) as f32,
            generations: s.usize("dne.generations", dd.generations)?,
            master_seed: s.int("dne.seed", seed),
            eval_test_every: s.usize("dne.eval_test_every", dd.eval_test_every)?,
        };
        dne.validate()?;

        let sd = SgdConfig::default();
        let pd = PlateauConfig::default();
        let optimizer = match s.string("sgd.optimizer", "adam").as_str() {
            "adam" => OptimizerKind::Adam,
            "sgd" => OptimizerKind::Sgd,
            other => {
                return Err(CliError::config(format!(
                    "sgd.optimizer must be adam or sgd, got {other:?}"
                )))
            }
        };
        let sgd = SgdConfig {
            optimizer,
            learning_rate: s.float("sgd.learning_rate", sd.learning_rate),
            batch_size: s.usize("sgd.batch_size", sd.batch_size)?,
            epochs: s.usize("sgd.epochs", sd.epochs)?,
            plateau: s.boolean("sgd.plateau", true).then(|| PlateauConfig {
                factor: s.float("sgd.plateau_factor", pd.factor),
                patience: s.int("sgd.plateau_patience", pd.patience as u64) as usize,
                min_lr: s.float("sgd.plateau_min_lr", pd.min_lr),
                threshold: s.float("sgd.plateau_threshold", pd.threshold),
            }),
            seed: s.int("sgd.seed", seed),
        };
        sgd.validate()?;

        let fill = match s.string("saliency.fill", "mean").as_str() {
            "mean" => Fill::Mean(0.0),
            "zero" => Fill::Zero,
            other => {
                return Err(CliError::config(format!(
                    "saliency.fill must be mean or zero, got {other:?}"
                )))
            }
        };
        let saliency = OcclusionConfig {
            patch: s.usize("saliency.patch", 16)?,
            stride: s.usize("saliency.stride", 8)?,
            fill,
        };
        if saliency.patch == 0 || saliency.stride == 0 || saliency.patch > architecture.input_size {
            return Err(CliError::config(format!(
                "saliency patch {} / stride {} invalid for {}px input",
                saliency.patch, saliency.stride, architecture.input_size
            )));
        }

        let workers = s.usize("workers", 1)?;
        if workers == 0 {
            return Err(CliError::config("workers must be at least 1"));
        }
        Ok(RunConfig {
            seed,
            output_dir: PathBuf::from(s.string("output_dir", "runs")),
            workers,
            architecture,
            data,
            dne,
            sgd,
            saliency,
        })
    }

    /// Every key with its resolved value, in the file format.
    pub fn to_text(&self) -> String {
        let a = &self.architecture;
        let mut entries: Vec<(&str, Value)> = vec![
            ("seed", Value::Int(self.seed)),
            (
                "output_dir",
                Value::Str(self.output_dir.display().to_string()),
            ),
            ("workers", Value::Int(self.workers as u64)),
            ("architecture.input_size", Value::Int(a.input_size as u64)),
            ("architecture.conv_layers", Value::Int(a.conv_layers as u64)),
            (
                "architecture.channels_per_layer",
                Value::Int(a.channels_per_layer as u64),
            ),
            ("architecture.kernel", Value::Int(a.kernel as u64)),
            ("architecture.stride", Value::Int(a.stride as u64)),
            ("architecture.pad", Value::Int(a.pad as u64)),
            (
                "architecture.fc_sizes",
                Value::Ints(a.fc_sizes.iter().map(|&x| x as u64).collect()),
            ),
            ("architecture.num_classes", Value::Int(a.num_classes as u64)),
        ];
        match &self.data {
            DataSource::Generate(c) => {
                let counts = c.outside_counts().unwrap_or(OutsideCounts::REFERRAL);
                let allocation = match c.allocation {
                    OutsideAllocation::Even => "even",
                    OutsideAllocation::ByClass(_) => "by_class",
                };
                entries.extend([
                    ("data.source", Value::Str("generate".into())),
                    ("data.seed", Value::Int(c.master_seed)),
                    ("data.n_train_normal", Value::Int(c.n_train_normal as u64)),
                    (
                        "data.n_train_metastasis",
                        Value::Int(c.n_train_metastasis as u64),
                    ),
                    ("data.n_test_normal", Value::Int(c.n_test_normal as u64)),
                    (
                        "data.n_test_metastasis",
                        Value::Int(c.n_test_metastasis as u64),
                    ),
                    ("data.n_institutions", Value::Int(c.n_institutions as u64)),
                    (
                        "data.outside_fraction_train",
                        Value::Float(c.outside_fraction_train),
                    ),
                    (
                        "data.outside_fraction_test",
                        Value::Float(c.outside_fraction_test),
                    ),
                    ("data.allocation", Value::Str(allocation.into())),
                    (
                        "data.outside_train_normal",
                        Value::Int(counts.train_normal as u64),
                    ),
                    (
                        "data.outside_train_metastasis",
                        Value::Int(counts.train_metastasis as u64),
                    ),
                    (
                        "data.outside_test_normal",
                        Value::Int(counts.test_normal as u64),
                    ),
                    (
                        "data.outside_test_metastasis",
                        Value::Int(counts.test_metastasis as u64),
                    ),
                ]);
            }
            DataSource::Micro { seed } => {
                entries.extend([
                    ("data.source", Value::Str("micro".into())),
                    ("data.seed", Value::Int(*seed)),
                ]);
            }
            DataSource::Manifest { path, ground_truth } => {
                entries.extend([
                    ("data.source", Value::Str("manifest".into())),
                    ("data.manifest", Value::Str(path.display().to_string())),
                    (
                        "data.ground_truth",
                        Value::Str(
                            ground_truth
                                .as_ref()
                                .map(|p| p.display().to_string())
                                .unwrap_or_default(),
                        ),
                    ),
                ]);
            }
        }
        let d = &self.dne;
        entries.extend([
            ("dne.seed", Value::Int(d.master_seed)),
            ("dne.population_size", Value::Int(d.population_size as u64)),
            ("dne.sigma", Value::Float(widen(d.sigma))),
            ("dne.eta", Value::Float(widen(d.eta))),
            ("dne.generations", Value::Int(d.generations as u64)),
            ("dne.eval_test_every", Value::Int(d.eval_test_every as u64)),
        ]);
        let g = &self.sgd;
        let p = g.plateau.unwrap_or_default();
        entries.extend([
            ("sgd.seed", Value::Int(g.seed)),
            (
                "sgd.optimizer",
                Value::Str(match g.optimizer {
                    OptimizerKind::Adam => "adam".into(),
                    OptimizerKind::Sgd => "sgd".into(),
                }),
            ),
            ("sgd.learning_rate", Value::Float(g.learning_rate)),
            ("sgd.batch_size", Value::Int(g.batch_size as u64)),
            ("sgd.epochs", Value::Int(g.epochs as u64)),
            ("sgd.plateau", Value::Bool(g.plateau.is_some())),
            ("sgd.plateau_factor", Value::Float(p.factor)),
            ("sgd.plateau_patience", Value::Int(p.patience as u64)),
            ("sgd.plateau_min_lr", Value::Float(p.min_lr)),
            ("sgd.plateau_threshold", Value::Float(p.threshold)),
        ]);
        let sal = &self.saliency;
        entries.extend([
            ("saliency.patch", Value::Int(sal.patch as u64)),
            ("saliency.stride", Value::Int(sal.stride as u64)),
            (
                "saliency.fill",
                Value::Str(match sal.fill {
                    Fill::Mean(_) => "mean".into(),
                    Fill::Zero => "zero".into(),
                }),
            ),
        ]);

        let mut out = String::new();
        let mut section = "";
        for (key, value) in &entries {
            let (sec, name) = key.split_once('.').unwrap_or(("", key));
            if sec != section {
                let _ = write!(out, "\n[{sec}]\n");
                section = sec;
            }
            let ty = key_type(key).expect("every emitted key is in the schema");
            let _ = writeln!(out, "{name}: {} = {}", ty.token(), value.render());
        }
        out
    }
}

fn corpus_spec(s: &Settings, seed: u64, image_size: usize) -> CliResult<CorpusSpec> {
    let d = CorpusSpec::default();
    let r = OutsideCounts::REFERRAL;
    let allocation = match s.string("data.allocation", "by_class").as_str() {
        "even" => OutsideAllocation::Even,
        "by_class" => OutsideAllocation::ByClass(OutsideCounts {
            train_normal: s.usize("data.outside_train_normal", r.train_normal)?,
            train_metastasis: s.usize("data.outside_train_metastasis", r.train_metastasis)?,
            test_normal: s.usize("data.outside_test_normal", r.test_normal)?,
            test_metastasis: s.usize("data.outside_test_metastasis", r.test_metastasis)?,
        }),
        other => {
            return Err(CliError::config(format!(
                "data.allocation must be by_class or even, got {other:?}"
            )))
        }
    };
    let spec = CorpusSpec {
        n_train_normal: s.usize("data.n_train_normal", d.n_train_normal)?,
        n_train_metastasis: s.usize("data.n_train_metastasis", d.n_train_metastasis)?,
        n_test_normal: s.usize("data.n_test_normal", d.n_test_normal)?,
        n_test_metastasis: s.usize("data.n_test_metastasis", d.n_test_metastasis)?,
        n_institutions: s.usize("data.n_institutions", d.n_institutions)?,
        outside_fraction_train: s.float("data.outside_fraction_train", d.outside_fraction_train),
        outside_fraction_test: s.float("data.outside_fraction_test", d.outside_fraction_test),
        allocation,
        image_size,
        master_seed: s.int("data.seed", seed),
    };
    spec.validate()?;
    Ok(spec)
}
