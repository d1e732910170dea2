//! Confusion-matrix metrics and multi-run aggregation.
//!
//! Each metric is either a value in [0, 1] or undefined (`None`) when its
//! denominator vanishes. Undefined values are never coerced to zero:
//! aggregation excludes them and reports how many were excluded.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        ConfusionMatrix { tp, fp, tn, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// (tp + tn) / total; undefined on an empty matrix.
    pub fn accuracy(&self) -> Option<f64> {
        match self.total() {
            0 => None,
            total => Some((self.tp + self.tn) as f64 / total as f64),
        }
    }

    /// tp / (tp + fp); undefined with no positive predictions.
    pub fn precision(&self) -> Option<f64> {
        match self.tp + self.fp {
            0 => None,
            den => Some(self.tp as f64 / den as f64),
        }
    }

    /// tp / (tp + fn); undefined with no actual positives.
    pub fn recall(&self) -> Option<f64> {
        match self.tp + self.fn_ {
            0 => None,
            den => Some(self.tp as f64 / den as f64),
        }
    }

    /// 2 * precision * recall / (precision + recall); undefined when either
    /// component is undefined or both are zero.
    pub fn f1(&self) -> Option<f64> {
        f1_from_components(self.precision(), self.recall())
    }

    pub fn metric_vector(&self) -> MetricVector {
        MetricVector {
            accuracy: self.accuracy(),
            precision: self.precision(),
            recall: self.recall(),
            f1: self.f1(),
        }
    }
}

/// Harmonic combination of precision and recall. Undefined when either
/// component is undefined or both are zero; `(1, 0)` style pairs with a
/// nonzero denominator give 0.
pub fn f1_from_components(precision: Option<f64>, recall: Option<f64>) -> Option<f64> {
    let (p, r) = (precision?, recall?);
    if p + r == 0.0 {
        None
    } else {
        Some(2.0 * p * r / (p + r))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricName {
    Accuracy,
    Precision,
    Recall,
    F1,
}

impl MetricName {
    pub fn all() -> [MetricName; 4] {
        [
            MetricName::Accuracy,
            MetricName::Precision,
            MetricName::Recall,
            MetricName::F1,
        ]
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MetricName::Accuracy => "accuracy",
            MetricName::Precision => "precision",
            MetricName::Recall => "recall",
            MetricName::F1 => "f1",
        }
    }

    pub fn parse(s: &str) -> Result<MetricName> {
        match s.to_ascii_lowercase().as_str() {
            "accuracy" => Ok(MetricName::Accuracy),
            "precision" => Ok(MetricName::Precision),
            "recall" => Ok(MetricName::Recall),
            "f1" => Ok(MetricName::F1),
            other => Err(Error::InvalidInput(format!(
                "unknown metric {other:?}; expected accuracy, precision, recall or f1"
            ))),
        }
    }
}

impl std::fmt::Display for MetricName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The four derived metrics of one evaluation; `None` marks undefined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricVector {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

impl MetricVector {
    pub fn get(&self, name: MetricName) -> Option<f64> {
        match name {
            MetricName::Accuracy => self.accuracy,
            MetricName::Precision => self.precision,
            MetricName::Recall => self.recall,
            MetricName::F1 => self.f1,
        }
    }
}

/// Mean and sample standard deviation over the defined values of one metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggStat {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub n: usize,
    pub excluded: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub accuracy: AggStat,
    pub precision: AggStat,
    pub recall: AggStat,
    pub f1: AggStat,
}

impl AggregateMetrics {
    pub fn get(&self, name: MetricName) -> AggStat {
        match name {
            MetricName::Accuracy => self.accuracy,
            MetricName::Precision => self.precision,
            MetricName::Recall => self.recall,
            MetricName::F1 => self.f1,
        }
    }
}

fn agg_one(values: Vec<f64>, excluded: usize) -> AggStat {
    let n = values.len();
    if n == 0 {
        return AggStat {
            mean: None,
            std: None,
            n,
            excluded,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n == 1 {
        0.0
    } else {
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        (ss / (n - 1) as f64).sqrt()
    };
    AggStat {
        mean: Some(mean),
        std: Some(std),
        n,
        excluded,
    }
}

/// Per-metric mean and sample (n-1) standard deviation over a list of runs,
/// excluding undefined values. Invariant to run ordering.
pub fn aggregate(runs: &[MetricVector]) -> Result<AggregateMetrics> {
    if runs.is_empty() {
        return Err(Error::InvalidInput("cannot aggregate zero runs".into()));
    }
    let one = |name: MetricName| {
        let values: Vec<f64> = runs.iter().filter_map(|r| r.get(name)).collect();
        let excluded = runs.len() - values.len();
        agg_one(values, excluded)
    };
    Ok(AggregateMetrics {
        accuracy: one(MetricName::Accuracy),
        precision: one(MetricName::Precision),
        recall: one(MetricName::Recall),
        f1: one(MetricName::F1),
    })
}
