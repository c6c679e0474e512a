//! Binary classification metrics with demented as the positive class.

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("length mismatch: {predicted} predictions, {truth} labels")]
    LengthMismatch { predicted: usize, truth: usize },
    #[error("labels must be 0 or 1, got {0}")]
    NotBinary(u8),
    #[error("both classes must be present")]
    SingleClass,
    #[error("score {0} is not finite")]
    NonFiniteScore(usize),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

pub fn confusion(predicted: &[u8], truth: &[u8]) -> Result<ConfusionMatrix> {
    if predicted.len() != truth.len() {
        return Err(MetricsError::LengthMismatch {
            predicted: predicted.len(),
            truth: truth.len(),
        });
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &t) in predicted.iter().zip(truth) {
        match (p, t) {
            (1, 1) => cm.tp += 1,
            (0, 0) => cm.tn += 1,
            (1, 0) => cm.fp += 1,
            (0, 1) => cm.fn_ += 1,
            (1, x) | (0, x) | (x, _) => return Err(MetricsError::NotBinary(x)),
        }
    }
    Ok(cm)
}

/// A ratio, with `degenerate` set when its denominator was zero (the
/// value is then 0).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Metric {
    pub value: f64,
    pub degenerate: bool,
}

impl Metric {
    fn ratio(num: f64, den: f64) -> Self {
        if den == 0.0 {
            Metric {
                value: 0.0,
                degenerate: true,
            }
        } else {
            Metric {
                value: num / den,
                degenerate: false,
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub accuracy: Metric,
    pub precision: Metric,
    pub recall: Metric,
    pub f1: Metric,
}

pub fn summary(cm: &ConfusionMatrix) -> Summary {
    let (tp, tn, fp, fn_) = (cm.tp as f64, cm.tn as f64, cm.fp as f64, cm.fn_ as f64);
    let precision = Metric::ratio(tp, tp + fp);
    let recall = Metric::ratio(tp, tp + fn_);
    let f1 = if precision.degenerate || recall.degenerate {
        Metric {
            value: 0.0,
            degenerate: true,
        }
    } else {
        Metric::ratio(2.0 * precision.value * recall.value, precision.value + recall.value)
    };
    Summary {
        accuracy: Metric::ratio(tp + tn, tp + tn + fp + fn_),
        precision,
        recall,
        f1,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RocCurve {
    pub auc: f64,
    /// From (0, 0) at threshold +inf down to (1, 1).
    pub points: Vec<RocPoint>,
}

/// Sweeps the threshold over every distinct score (descending) and
/// integrates TPR over FPR with the trapezoid rule. Tied scores move
/// along a diagonal segment, which counts each tie as one half.
pub fn roc_auc(scores: &[f64], truth: &[u8]) -> Result<RocCurve> {
    if scores.len() != truth.len() {
        return Err(MetricsError::LengthMismatch {
            predicted: scores.len(),
            truth: truth.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MetricsError::NonFiniteScore(i));
    }
    if let Some(&x) = truth.iter().find(|&&t| t > 1) {
        return Err(MetricsError::NotBinary(x));
    }
    let pos = truth.iter().filter(|&&t| t == 1).count() as f64;
    let neg = truth.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return Err(MetricsError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp, mut auc) = (0.0f64, 0.0f64, 0.0f64);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if truth[order[i]] == 1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        let prev = *points.last().expect("seeded with origin");
        let p = RocPoint {
            threshold,
            fpr: fp / neg,
            tpr: tp / pos,
        };
        auc += (p.fpr - prev.fpr) * (p.tpr + prev.tpr) / 2.0;
        points.push(p);
    }
    Ok(RocCurve { auc, points })
}

pub fn write_roc_csv<W: Write>(writer: W, curve: &RocCurve) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["threshold", "fpr", "tpr"])?;
    for p in &curve.points {
        w.write_record(&[p.threshold.to_string(), p.fpr.to_string(), p.tpr.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
