//! Confusion matrices, derived quality measures and McNemar's test.
//!
//! Measures are kept as exact ratios of counts so they can be compared
//! without rounding; a zero denominator yields `None`, never NaN.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::Label;

/// Two-class confusion counts, positive class = metastasis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fn_: u64,
    pub fp: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    /// Builds from counts in `[tp, fn, fp, tn]` order.
    pub fn from_counts([tp, fn_, fp, tn]: [u64; 4]) -> Self {
        ConfusionMatrix { tp, fn_, fp, tn }
    }

    pub fn counts(&self) -> [u64; 4] {
        [self.tp, self.fn_, self.fp, self.tn]
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fn_ + self.fp + self.tn
    }

    /// Counts divided by the largest one, in `[tp, fn, fp, tn]` order.
    pub fn scaled(&self) -> [f64; 4] {
        let c = self.counts();
        let max = c.iter().copied().max().unwrap_or(0);
        if max == 0 {
            return [0.0; 4];
        }
        c.map(|v| v as f64 / max as f64)
    }
}

pub fn confusion(preds: &[Label], labels: &[Label]) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(Error::arg(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::arg(
            "cannot build a confusion matrix from no samples",
        ));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &l) in preds.iter().zip(labels) {
        match (l, p) {
            (Label::Metastasis, Label::Metastasis) => cm.tp += 1,
            (Label::Metastasis, Label::Normal) => cm.fn_ += 1,
            (Label::Normal, Label::Metastasis) => cm.fp += 1,
            (Label::Normal, Label::Normal) => cm.tn += 1,
        }
    }
    Ok(cm)
}

/// An exact nonnegative ratio with a nonzero denominator.
#[derive(Debug, Clone, Copy, Eq)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    pub fn new(num: u64, den: u64) -> Option<Ratio> {
        (den != 0).then_some(Ratio { num, den })
    }

    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl PartialEq for Ratio {
    /// Equal as rational numbers.
    fn eq(&self, other: &Self) -> bool {
        self.num as u128 * other.den as u128 == other.num as u128 * self.den as u128
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub accuracy: Option<Ratio>,
    pub sensitivity: Option<Ratio>,
    pub specificity: Option<Ratio>,
    pub ppv: Option<Ratio>,
    pub npv: Option<Ratio>,
    pub f1: Option<Ratio>,
}

pub fn report(cm: &ConfusionMatrix) -> MetricsReport {
    let ConfusionMatrix { tp, fn_, fp, tn } = *cm;
    let sensitivity = Ratio::new(tp, tp + fn_);
    let ppv = Ratio::new(tp, tp + fp);
    // harmonic mean of ppv and sensitivity: 2tp / (2tp + fp + fn)
    let f1 = match (sensitivity, ppv) {
        (Some(_), Some(_)) => Ratio::new(2 * tp, 2 * tp + fp + fn_),
        _ => None,
    };
    MetricsReport {
        accuracy: Ratio::new(tp + tn, cm.total()),
        sensitivity,
        specificity: Ratio::new(tn, tn + fp),
        ppv,
        npv: Ratio::new(tn, tn + fn_),
        f1,
    }
}

/// Discordant pair counts of two paired classifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Discordance {
    /// A correct, B wrong.
    pub b: u64,
    /// A wrong, B correct.
    pub c: u64,
}

pub fn discordance(correct_a: &[bool], correct_b: &[bool]) -> Result<Discordance> {
    if correct_a.len() != correct_b.len() {
        return Err(Error::arg(format!(
            "paired correctness lists differ in length ({} vs {})",
            correct_a.len(),
            correct_b.len()
        )));
    }
    if correct_a.is_empty() {
        return Err(Error::arg(
            "McNemar's test needs at least one paired sample",
        ));
    }
    let mut d = Discordance { b: 0, c: 0 };
    for (&a, &b) in correct_a.iter().zip(correct_b) {
        match (a, b) {
            (true, false) => d.b += 1,
            (false, true) => d.c += 1,
            _ => {}
        }
    }
    Ok(d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum McNemarMode {
    /// Two-sided exact binomial test on the discordant pairs.
    Exact,
    /// Chi-square with continuity correction, one degree of freedom.
    Chi2Cc,
}

pub fn mcnemar(correct_a: &[bool], correct_b: &[bool], mode: McNemarMode) -> Result<f64> {
    let d = discordance(correct_a, correct_b)?;
    Ok(match mode {
        McNemarMode::Exact => mcnemar_exact(d.b, d.c),
        McNemarMode::Chi2Cc => mcnemar_chi2_cc(d.b, d.c),
    })
}

/// `min(1, 2·P(X ≤ min(b,c)))` with `X ~ Binomial(b+c, 1/2)`.
pub fn mcnemar_exact(b: u64, c: u64) -> f64 {
    let n = b + c;
    if n == 0 {
        return 1.0;
    }
    let k = b.min(c);
    if 2 * k >= n {
        return 1.0;
    }
    // Sum pmf(0..=k) relative to pmf(k), walking down with
    // pmf(i-1)/pmf(i) = i / (n - i + 1).
    let mut term = 1.0f64;
    let mut sum = 1.0f64;
    let mut i = k;
    while i > 0 {
        term *= i as f64 / (n - i + 1) as f64;
        sum += term;
        if term < sum * 1e-18 {
            break;
        }
        i -= 1;
    }
    let log_pmf_k = ln_choose(n, k) - n as f64 * core::f64::consts::LN_2;
    (2.0 * sum * libm::exp(log_pmf_k)).min(1.0)
}

/// `ln C(n, k)`, exact summation of logs for small `n`.
fn ln_choose(n: u64, k: u64) -> f64 {
    let k = k.min(n - k);
    if n <= 1024 {
        let mut acc = 0.0f64;
        for i in 0..k {
            acc += libm::log((n - i) as f64) - libm::log((i + 1) as f64);
        }
        acc
    } else {
        libm::lgamma(n as f64 + 1.0)
            - libm::lgamma(k as f64 + 1.0)
            - libm::lgamma((n - k) as f64 + 1.0)
    }
}

/// Statistic `max(0, |b−c|−1)² / (b+c)` against the chi-square(1) upper tail.
pub fn mcnemar_chi2_cc(b: u64, c: u64) -> f64 {
    let n = b + c;
    if n == 0 {
        return 1.0;
    }
    let diff = (b as f64 - c as f64).abs() - 1.0;
    let stat = if diff > 0.0 {
        diff * diff / n as f64
    } else {
        0.0
    };
    chi2_1_upper_tail(stat)
}

/// `P(χ²₁ > x) = erfc(sqrt(x/2))`.
pub fn chi2_1_upper_tail(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    libm::erfc(libm::sqrt(x / 2.0))
}

/// Confusion matrix of `preds` against `labels` restricted to `keep`; `None`
/// when nothing is kept.
pub fn subset_confusion(
    preds: &[Label],
    labels: &[Label],
    keep: &[bool],
) -> Result<Option<ConfusionMatrix>> {
    if keep.len() != preds.len() {
        return Err(Error::arg("subset mask length differs from predictions"));
    }
    let (p, l): (Vec<Label>, Vec<Label>) = preds
        .iter()
        .zip(labels)
        .zip(keep)
        .filter(|(_, &k)| k)
        .map(|((&p, &l), _)| (p, l))
        .unzip();
    if p.is_empty() {
        return Ok(None);
    }
    confusion(&p, &l).map(Some)
}
