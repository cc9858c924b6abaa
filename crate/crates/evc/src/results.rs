//! Predictions CSV, metrics JSON and paired-comparison reports.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use evc_core::metrics::{self, ConfusionMatrix, Ratio};
use evc_core::Label;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::imageio::write_file;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prediction {
    pub sample_id: String,
    pub label: Label,
    pub pred: Label,
}

impl Prediction {
    pub fn correct(&self) -> bool {
        self.label == self.pred
    }
}

#[derive(Serialize, Deserialize)]
struct PredictionRow {
    sample_id: String,
    label: String,
    pred: String,
    correct: u8,
}

pub fn write_predictions(path: &Path, preds: &[Prediction]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    for p in preds {
        w.serialize(PredictionRow {
            sample_id: p.sample_id.clone(),
            label: p.label.token().to_string(),
            pred: p.pred.token().to_string(),
            correct: p.correct() as u8,
        })?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_predictions(path: &Path) -> CliResult<Vec<Prediction>> {
    let fail = |msg: String| CliError::data(format!("{}: {msg}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(|e| fail(e.to_string()))?;
    let mut out = Vec::new();
    for (i, rec) in r.deserialize().enumerate() {
        let row: PredictionRow = rec.map_err(|e| fail(format!("row {}: {e}", i + 1)))?;
        let parse = |t: &str| {
            Label::parse(t).ok_or_else(|| fail(format!("row {}: unknown label {t:?}", i + 1)))
        };
        let p = Prediction {
            sample_id: row.sample_id,
            label: parse(&row.label)?,
            pred: parse(&row.pred)?,
        };
        if p.correct() as u8 != row.correct {
            return Err(fail(format!(
                "row {}: correct flag disagrees with label and pred",
                i + 1
            )));
        }
        out.push(p);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McNemarJson {
    pub b: u64,
    pub c: u64,
    pub p_exact: f64,
    pub p_chi2: f64,
}

impl McNemarJson {
    pub fn from_correctness(a: &[bool], b: &[bool]) -> CliResult<Self> {
        let d = metrics::discordance(a, b)?;
        Ok(McNemarJson {
            b: d.b,
            c: d.c,
            p_exact: metrics::mcnemar_exact(d.b, d.c),
            p_chi2: metrics::mcnemar_chi2_cc(d.b, d.c),
        })
    }
}

/// Undefined ratios serialize as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsJson {
    pub n: u64,
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub ppv: Option<f64>,
    pub npv: Option<f64>,
    pub f1: Option<f64>,
    /// `[tp, fn, fp, tn]`
    pub confusion: [u64; 4],
    pub mcnemar: Option<McNemarJson>,
}

impl MetricsJson {
    pub fn from_confusion(cm: &ConfusionMatrix) -> Self {
        let r = metrics::report(cm);
        let v = |x: Option<Ratio>| x.map(|x| x.value());
        MetricsJson {
            n: cm.total(),
            accuracy: v(r.accuracy),
            sensitivity: v(r.sensitivity),
            specificity: v(r.specificity),
            ppv: v(r.ppv),
            npv: v(r.npv),
            f1: v(r.f1),
            confusion: cm.counts(),
            mcnemar: None,
        }
    }
}

/// Metrics overall and on the home and outside subsets; a subset is
/// `null` when it has no samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: MetricsJson,
    pub home: Option<MetricsJson>,
    pub outside: Option<MetricsJson>,
}

/// `home_mask[i]` tells whether prediction `i` came from the home site.
pub fn eval_report(preds: &[Prediction], home_mask: &[bool]) -> CliResult<EvalReport> {
    let p: Vec<Label> = preds.iter().map(|x| x.pred).collect();
    let l: Vec<Label> = preds.iter().map(|x| x.label).collect();
    let outside_mask: Vec<bool> = home_mask.iter().map(|h| !h).collect();
    let subset = |mask: &[bool]| -> CliResult<Option<MetricsJson>> {
        Ok(metrics::subset_confusion(&p, &l, mask)?.map(|cm| MetricsJson::from_confusion(&cm)))
    };
    Ok(EvalReport {
        overall: MetricsJson::from_confusion(&metrics::confusion(&p, &l)?),
        home: subset(home_mask)?,
        outside: subset(&outside_mask)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub n: usize,
    pub a: MetricsJson,
    pub b: MetricsJson,
    pub overall: McNemarJson,
    /// Present when institution tags were supplied and some sample is
    /// from outside the home site.
    pub outside: Option<McNemarJson>,
    pub n_outside: Option<usize>,
}

/// Joins two prediction lists on sample id and tests the paired
/// difference. `institutions` maps ids to site tags.
pub fn compare(
    a: &[Prediction],
    b: &[Prediction],
    institutions: Option<&BTreeMap<String, String>>,
    home_tag: &str,
) -> CliResult<CompareReport> {
    let index = |preds: &[Prediction], which: &str| -> CliResult<BTreeMap<String, Prediction>> {
        let mut m = BTreeMap::new();
        for p in preds {
            if m.insert(p.sample_id.clone(), p.clone()).is_some() {
                return Err(CliError::config(format!(
                    "duplicate sample id {} in {which}",
                    p.sample_id
                )));
            }
        }
        Ok(m)
    };
    let (ma, mb) = (index(a, "A")?, index(b, "B")?);
    let ka: HashSet<&String> = ma.keys().collect();
    let kb: HashSet<&String> = mb.keys().collect();
    if ka != kb {
        let mut only_a: Vec<&str> = ka.difference(&kb).map(|s| s.as_str()).collect();
        let mut only_b: Vec<&str> = kb.difference(&ka).map(|s| s.as_str()).collect();
        only_a.sort_unstable();
        only_b.sort_unstable();
        return Err(CliError::config(format!(
            "sample ids differ; only in A: [{}]; only in B: [{}]",
            only_a.join(", "),
            only_b.join(", ")
        )));
    }
    let mut rows = Vec::with_capacity(ma.len());
    for (id, pa) in &ma {
        let pb = &mb[id];
        if pa.label != pb.label {
            return Err(CliError::data(format!(
                "sample {id} has different labels in A and B"
            )));
        }
        rows.push((id.as_str(), pa, pb));
    }
    let ca: Vec<bool> = rows.iter().map(|r| r.1.correct()).collect();
    let cb: Vec<bool> = rows.iter().map(|r| r.2.correct()).collect();
    let metrics_of = |k: usize| -> CliResult<MetricsJson> {
        let (p, l): (Vec<Label>, Vec<Label>) = rows
            .iter()
            .map(|r| {
                if k == 0 {
                    (r.1.pred, r.1.label)
                } else {
                    (r.2.pred, r.2.label)
                }
            })
            .unzip();
        Ok(MetricsJson::from_confusion(&metrics::confusion(&p, &l)?))
    };

    let (outside, n_outside) = match institutions {
        None => (None, None),
        Some(tags) => {
            let mut keep = Vec::with_capacity(rows.len());
            for (id, _, _) in &rows {
                let tag = tags.get(*id).ok_or_else(|| {
                    CliError::config(format!("sample {id} not found in manifest"))
                })?;
                keep.push(tag != home_tag);
            }
            let sa: Vec<bool> = ca
                .iter()
                .zip(&keep)
                .filter(|(_, &k)| k)
                .map(|(&c, _)| c)
                .collect();
            let sb: Vec<bool> = cb
                .iter()
                .zip(&keep)
                .filter(|(_, &k)| k)
                .map(|(&c, _)| c)
                .collect();
            let n = sa.len();
            let test = if n == 0 {
                None
            } else {
                Some(McNemarJson::from_correctness(&sa, &sb)?)
            };
            (test, Some(n))
        }
    };
    Ok(CompareReport {
        n: rows.len(),
        a: metrics_of(0)?,
        b: metrics_of(1)?,
        overall: McNemarJson::from_correctness(&ca, &cb)?,
        outside,
        n_outside,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::data(e.to_string()))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}
