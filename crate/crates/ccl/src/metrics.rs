//! Per-class IoU and mIoU evaluation over confusion matrices, plus the
//! JSON metrics report shape used by the CLI.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{LabelMap, IGNORE_LABEL};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("prediction {a_h}x{a_w} does not match truth {b_h}x{b_w}")]
    ShapeMismatch { a_h: usize, a_w: usize, b_h: usize, b_w: usize },
    #[error("confusion matrices have different class counts: {a} vs {b}")]
    ClassMismatch { a: usize, b: usize },
    #[error("every class has an empty union; mIoU is undefined")]
    AllUndefined,
    #[error("prediction contains ignore or out-of-range value {value}")]
    BadPrediction { value: u8 },
}

/// Row = ground truth class, column = predicted class. Ignored truth
/// pixels are never counted, so the total equals the number of evaluated
/// pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Array2<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self { counts: Array2::zeros((num_classes, num_classes)) }
    }

    pub fn num_classes(&self) -> usize {
        self.counts.dim().0
    }

    pub fn counts(&self) -> &Array2<u64> {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.sum()
    }

    /// Add one prediction/truth pair. Truth pixels equal to IGNORE are
    /// skipped.
    pub fn accumulate(&mut self, pred: &LabelMap, truth: &LabelMap) -> Result<(), MetricsError> {
        if pred.height() != truth.height() || pred.width() != truth.width() {
            return Err(MetricsError::ShapeMismatch {
                a_h: pred.height(),
                a_w: pred.width(),
                b_h: truth.height(),
                b_w: truth.width(),
            });
        }
        let c = self.num_classes();
        for y in 0..truth.height() {
            for x in 0..truth.width() {
                let t = truth.get(y, x);
                if t == IGNORE_LABEL {
                    continue;
                }
                let p = pred.get(y, x);
                if p as usize >= c {
                    return Err(MetricsError::BadPrediction { value: p });
                }
                self.counts[(t as usize, p as usize)] += 1;
            }
        }
        Ok(())
    }

    /// Merge another matrix in, so evaluation shards can reduce.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<(), MetricsError> {
        if self.num_classes() != other.num_classes() {
            return Err(MetricsError::ClassMismatch {
                a: self.num_classes(),
                b: other.num_classes(),
            });
        }
        self.counts += &other.counts;
        Ok(())
    }

    /// Per-class IoU (None when a class appears in neither prediction nor
    /// truth) and their mean over defined classes.
    pub fn miou(&self) -> Result<MiouResult, MetricsError> {
        let c = self.num_classes();
        let mut per_class = vec![None; c];
        let mut sum = 0.0;
        let mut defined = 0usize;
        for k in 0..c {
            let tp = self.counts[(k, k)];
            let fp: u64 = (0..c).filter(|&r| r != k).map(|r| self.counts[(r, k)]).sum();
            let fn_: u64 = (0..c).filter(|&col| col != k).map(|col| self.counts[(k, col)]).sum();
            let denom = tp + fp + fn_;
            if denom > 0 {
                let iou = tp as f64 / denom as f64;
                per_class[k] = Some(iou);
                sum += iou;
                defined += 1;
            }
        }
        if defined == 0 {
            return Err(MetricsError::AllUndefined);
        }
        Ok(MiouResult { per_class, mean: sum / defined as f64 })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiouResult {
    /// IoU per class; None for classes absent from both prediction and
    /// truth, which are excluded from the mean.
    pub per_class: Vec<Option<f64>>,
    pub mean: f64,
}

/// One evaluation record, serialized into the metrics report JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    pub domain_id: usize,
    /// Model role the record belongs to ("student", "expert_1", ...).
    pub role: String,
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
}
