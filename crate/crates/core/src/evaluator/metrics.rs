//! Confusion-matrix metrics for hard binary verdicts.

use std::fmt;
use std::ops::Add;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::Verdict;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("confusion matrix has no valid verdicts")]
    EmptyMatrix,
    #[error("rate is undefined because a gold class has no members")]
    UndefinedRate,
}

/// Counts under the standard lettering: `fp` is a gold negative predicted
/// positive, `fn` a gold positive predicted negative.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    /// Examples without a usable verdict; excluded from every metric.
    #[serde(default)]
    pub invalid: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self { tp, fp, fn_, tn, invalid: 0 }
    }

    /// Adds one outcome; `None` counts as invalid.
    pub fn record(&mut self, gold: Verdict, predicted: Option<Verdict>) {
        match (gold, predicted) {
            (Verdict::Positive, Some(Verdict::Positive)) => self.tp += 1,
            (Verdict::Positive, Some(Verdict::Negative)) => self.fn_ += 1,
            (Verdict::Negative, Some(Verdict::Negative)) => self.tn += 1,
            (Verdict::Negative, Some(Verdict::Positive)) => self.fp += 1,
            (_, None) => self.invalid += 1,
        }
    }

    pub fn from_pairs<I: IntoIterator<Item = (Verdict, Option<Verdict>)>>(pairs: I) -> Self {
        let mut m = Self::default();
        for (g, p) in pairs {
            m.record(g, p);
        }
        m
    }

    /// Number of valid verdicts.
    pub fn valid(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn total(&self) -> u64 {
        self.valid() + self.invalid
    }

    pub fn disagreements(&self) -> u64 {
        self.fp + self.fn_
    }

    /// Exchanges the roles of the positive and negative class.
    pub fn swapped(&self) -> Self {
        Self {
            tp: self.tn,
            fp: self.fn_,
            fn_: self.fp,
            tn: self.tp,
            invalid: self.invalid,
        }
    }

    fn nonempty(&self) -> Result<u64, MetricError> {
        match self.valid() {
            0 => Err(MetricError::EmptyMatrix),
            n => Ok(n),
        }
    }
}

impl Add for ConfusionMatrix {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
            invalid: self.invalid + o.invalid,
        }
    }
}

impl std::iter::Sum for ConfusionMatrix {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

impl fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "tp={} fp={} fn={} tn={} invalid={}",
            self.tp, self.fp, self.fn_, self.tn, self.invalid
        )
    }
}

pub fn accuracy(m: &ConfusionMatrix) -> Result<f64, MetricError> {
    let n = m.nonempty()?;
    Ok((m.tp + m.tn) as f64 / n as f64)
}

/// True-positive rate.
pub fn recall(m: &ConfusionMatrix) -> Result<f64, MetricError> {
    rate(m.tp, m.tp + m.fn_)
}

/// True-negative rate.
pub fn specificity(m: &ConfusionMatrix) -> Result<f64, MetricError> {
    rate(m.tn, m.tn + m.fp)
}

fn rate(num: u64, den: u64) -> Result<f64, MetricError> {
    if den == 0 {
        Err(MetricError::UndefinedRate)
    } else {
        Ok(num as f64 / den as f64)
    }
}

/// Area under the ROC curve of a single hard decision, i.e. balanced accuracy.
pub fn auc(m: &ConfusionMatrix) -> Result<f64, MetricError> {
    m.nonempty()?;
    Ok((recall(m)? + specificity(m)?) / 2.0)
}

/// F1 of the positive class; `None` when it has no gold or predicted members.
pub fn f1_positive(m: &ConfusionMatrix) -> Option<f64> {
    f1(m.tp, m.fp, m.fn_)
}

/// F1 of the negative class; `None` when it has no gold or predicted members.
pub fn f1_negative(m: &ConfusionMatrix) -> Option<f64> {
    f1(m.tn, m.fn_, m.fp)
}

fn f1(hits: u64, false_alarms: u64, misses: u64) -> Option<f64> {
    let den = 2 * hits + false_alarms + misses;
    (den > 0).then(|| (2 * hits) as f64 / den as f64)
}

/// Mean of the per-class F1 scores that are defined.
pub fn f1_macro(m: &ConfusionMatrix) -> Result<f64, MetricError> {
    m.nonempty()?;
    let defined: Vec<f64> = [f1_positive(m), f1_negative(m)].into_iter().flatten().collect();
    Ok(defined.iter().sum::<f64>() / defined.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kappa {
    pub value: f64,
    /// Chance agreement was 1, so κ is reported as 0.
    pub degenerate: bool,
}

/// Cohen's κ, computed from integer counts so that rational results are exact.
pub fn cohen_kappa(m: &ConfusionMatrix) -> Result<Kappa, MetricError> {
    let n = m.nonempty()? as u128;
    let (tp, fp, fn_, tn) = (m.tp as u128, m.fp as u128, m.fn_ as u128, m.tn as u128);
    let chance = (tp + fp) * (tp + fn_) + (tn + fn_) * (tn + fp);
    let observed = n * (tp + tn);
    let den = n * n - chance;
    if den == 0 {
        return Ok(Kappa {
            value: 0.0,
            degenerate: true,
        });
    }
    Ok(Kappa {
        value: (observed as f64 - chance as f64) / den as f64,
        degenerate: false,
    })
}

pub fn kappa(m: &ConfusionMatrix) -> Result<f64, MetricError> {
    cohen_kappa(m).map(|k| k.value)
}

/// Conventional verbal bands for κ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KappaBand {
    None,
    Slight,
    Fair,
    Moderate,
    Substantial,
    AlmostPerfect,
}

impl KappaBand {
    pub fn of(kappa: f64) -> Self {
        // Bands are stated on two decimals.
        let k = (kappa * 100.0).round() / 100.0;
        match k {
            k if k <= 0.0 => Self::None,
            k if k <= 0.20 => Self::Slight,
            k if k <= 0.40 => Self::Fair,
            k if k <= 0.60 => Self::Moderate,
            k if k <= 0.80 => Self::Substantial,
            _ => Self::AlmostPerfect,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Slight => "slight",
            Self::Fair => "fair",
            Self::Moderate => "moderate",
            Self::Substantial => "substantial",
            Self::AlmostPerfect => "almost perfect",
        }
    }
}

impl fmt::Display for KappaBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// All metrics for one matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub accuracy: f64,
    /// Absent when one gold class is empty.
    pub auc: Option<f64>,
    pub f1_macro: f64,
    pub f1_positive: Option<f64>,
    pub f1_negative: Option<f64>,
    pub kappa: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub kappa_degenerate: bool,
    pub kappa_band: KappaBand,
    pub matrix: ConfusionMatrix,
}

impl ClassMetrics {
    pub fn from_matrix(matrix: ConfusionMatrix) -> Result<Self, MetricError> {
        let k = cohen_kappa(&matrix)?;
        Ok(Self {
            accuracy: accuracy(&matrix)?,
            auc: match auc(&matrix) {
                Ok(v) => Some(v),
                Err(MetricError::UndefinedRate) => None,
                Err(e) => return Err(e),
            },
            f1_macro: f1_macro(&matrix)?,
            f1_positive: f1_positive(&matrix),
            f1_negative: f1_negative(&matrix),
            kappa: k.value,
            kappa_degenerate: k.degenerate,
            kappa_band: KappaBand::of(k.value),
            matrix,
        })
    }
}

/// Unweighted means over classes; each mean skips classes where the metric is absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroMetrics {
    pub accuracy: f64,
    pub auc: Option<f64>,
    pub f1_macro: f64,
    pub kappa: f64,
    pub kappa_band: KappaBand,
    pub classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    /// Mean over classes (the headline figures).
    #[serde(rename = "macro")]
    pub macro_: MacroMetrics,
    /// Metrics of the element-wise sum of all matrices.
    pub pooled: ClassMetrics,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// `None` when `per_class` is empty.
pub fn macro_aggregate<'a>(per_class: impl IntoIterator<Item = &'a ClassMetrics> + Clone) -> Option<Aggregate> {
    let classes: Vec<&ClassMetrics> = per_class.into_iter().collect();
    if classes.is_empty() {
        return None;
    }
    let kappa = mean(classes.iter().map(|c| c.kappa))?;
    let pooled_matrix: ConfusionMatrix = classes.iter().map(|c| c.matrix).sum();
    Some(Aggregate {
        macro_: MacroMetrics {
            accuracy: mean(classes.iter().map(|c| c.accuracy))?,
            auc: mean(classes.iter().filter_map(|c| c.auc)),
            f1_macro: mean(classes.iter().map(|c| c.f1_macro))?,
            kappa,
            kappa_band: KappaBand::of(kappa),
            classes: classes.len(),
        },
        pooled: ClassMetrics::from_matrix(pooled_matrix).ok()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(tp: u64, fp: u64, fn_: u64, tn: u64) -> ConfusionMatrix {
        ConfusionMatrix::new(tp, fp, fn_, tn)
    }

    #[test]
    fn perfect_matrix() {
        let c = ClassMetrics::from_matrix(m(10, 0, 0, 10)).unwrap();
        assert_eq!((c.accuracy, c.auc, c.f1_macro, c.kappa), (1.0, Some(1.0), 1.0, 1.0));
        assert_eq!(c.kappa_band, KappaBand::AlmostPerfect);
    }

    #[test]
    fn worked_example() {
        let x = m(8, 2, 3, 7);
        assert_eq!(accuracy(&x).unwrap(), 0.75);
        assert!((auc(&x).unwrap() - (8.0 / 11.0 + 7.0 / 9.0) / 2.0).abs() < 1e-15);
        assert!((f1_macro(&x).unwrap() - (16.0 / 21.0 + 14.0 / 19.0) / 2.0).abs() < 1e-15);
        assert_eq!(kappa(&x).unwrap(), 0.5);
    }

    #[test]
    fn balanced_symmetric_kappa() {
        let x = m(415, 85, 85, 415);
        assert!((accuracy(&x).unwrap() - 0.830).abs() < 1e-12);
        assert!((auc(&x).unwrap() - 0.830).abs() < 1e-12);
        assert!((kappa(&x).unwrap() - 0.660).abs() < 1e-9);
    }

    #[test]
    fn constant_classifier() {
        let x = m(5, 5, 0, 0);
        let c = ClassMetrics::from_matrix(x).unwrap();
        assert_eq!(c.accuracy, 0.5);
        assert_eq!(c.auc, Some(0.5));
        assert_eq!(c.f1_negative, Some(0.0));
        assert!((c.f1_macro - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(f1_negative(&m(5, 0, 0, 0)), None);
        assert_eq!(c.kappa, 0.0);
    }

    #[test]
    fn degenerate_and_empty() {
        let k = cohen_kappa(&m(4, 0, 0, 0)).unwrap();
        assert!(k.degenerate);
        assert_eq!(k.value, 0.0);
        assert_eq!(auc(&m(4, 0, 0, 0)), Err(MetricError::UndefinedRate));
        let empty = ConfusionMatrix {
            invalid: 3,
            ..Default::default()
        };
        assert_eq!(accuracy(&empty), Err(MetricError::EmptyMatrix));
        assert_eq!(ClassMetrics::from_matrix(empty), Err(MetricError::EmptyMatrix));
    }

    #[test]
    fn swap_symmetry() {
        let x = m(7, 3, 2, 9);
        let y = x.swapped();
        for f in [accuracy, auc, kappa, f1_macro] {
            assert!((f(&x).unwrap() - f(&y).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn aggregates() {
        let a = ClassMetrics::from_matrix(m(2, 0, 0, 2)).unwrap();
        let b = ClassMetrics::from_matrix(m(0, 2, 2, 0)).unwrap();
        let agg = macro_aggregate([&a, &b]).unwrap();
        assert_eq!(agg.macro_.accuracy, 0.5);
        assert_eq!(agg.pooled.accuracy, 0.5);
        assert_eq!(agg.pooled.matrix, m(2, 2, 2, 2));
        let single = macro_aggregate([&a]).unwrap();
        assert_eq!(single.macro_.f1_macro, a.f1_macro);
        assert!(macro_aggregate(std::iter::empty::<&ClassMetrics>()).is_none());
    }

    #[test]
    fn bands() {
        assert_eq!(KappaBand::of(-0.241), KappaBand::None);
        assert_eq!(KappaBand::of(0.0), KappaBand::None);
        assert_eq!(KappaBand::of(0.243), KappaBand::Fair);
        assert_eq!(KappaBand::of(0.5), KappaBand::Moderate);
        assert_eq!(KappaBand::of(0.601), KappaBand::Moderate);
        assert_eq!(KappaBand::of(0.660), KappaBand::Substantial);
    }

    #[test]
    fn serde_uses_fn_key() {
        let v = serde_json::to_value(m(1, 2, 3, 4)).unwrap();
        assert_eq!(v["fn"], 3);
    }
}
