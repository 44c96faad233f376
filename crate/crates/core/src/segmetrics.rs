//! Pixel-level segmentation metrics: aAcc, mAcc and mIoU on a 0–100 scale.
//!
//! For class `x`, `TP = counts[x][x]`, `FP` sums column `x` off the diagonal
//! and `FN` sums row `x` off the diagonal; `IoU = TP / (TP + FP + FN)`.
//! Classes that never occur in either ground truth or prediction have no IoU
//! and are left out of the means.

use serde::Serialize;
use thiserror::Error;

use crate::imagecodec::{LabelMap, IGNORE_LABEL};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("class count must be between 1 and 255, got {0}")]
    ClassCount(usize),
    #[error("label maps differ in size: ground truth {gt:?}, prediction {pred:?}")]
    DimensionMismatch {
        gt: (usize, usize),
        pred: (usize, usize),
    },
    #[error("{which} label {label} at pixel {index} is outside 0..{classes}")]
    LabelOutOfRange {
        which: &'static str,
        label: u8,
        index: usize,
        classes: usize,
    },
    #[error("cannot merge confusion matrices over {0} and {1} classes")]
    MergeMismatch(usize, usize),
    #[error("no pixels were accumulated")]
    Empty,
}

/// `counts[g][p]`: pixels with ground truth `g` predicted as `p`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    ignore: u8,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Result<Self, MetricsError> {
        Self::with_ignore(classes, IGNORE_LABEL)
    }

    pub fn with_ignore(classes: usize, ignore: u8) -> Result<Self, MetricsError> {
        if classes == 0 || classes > 255 {
            return Err(MetricsError::ClassCount(classes));
        }
        Ok(Self {
            classes,
            ignore,
            counts: vec![0; classes * classes],
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds one count per pixel whose ground truth is not the ignore label.
    /// On error the matrix is left unchanged.
    pub fn accumulate(&mut self, gt: &LabelMap, pred: &LabelMap) -> Result<(), MetricsError> {
        if (gt.width(), gt.height()) != (pred.width(), pred.height()) {
            return Err(MetricsError::DimensionMismatch {
                gt: (gt.width(), gt.height()),
                pred: (pred.width(), pred.height()),
            });
        }
        let k = self.classes;
        let out_of_range = |which, label, index| MetricsError::LabelOutOfRange {
            which,
            label,
            index,
            classes: k,
        };
        // validate first so a bad pixel never leaves a half-merged matrix
        for (index, (&g, &p)) in gt.labels().iter().zip(pred.labels()).enumerate() {
            if g == self.ignore {
                continue;
            }
            if g as usize >= k {
                return Err(out_of_range("ground-truth", g, index));
            }
            if p as usize >= k {
                return Err(out_of_range("predicted", p, index));
            }
        }
        for (&g, &p) in gt.labels().iter().zip(pred.labels()) {
            if g != self.ignore {
                self.counts[g as usize * k + p as usize] += 1;
            }
        }
        Ok(())
    }

    /// Elementwise sum; associative and commutative.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<(), MetricsError> {
        if self.classes != other.classes {
            return Err(MetricsError::MergeMismatch(self.classes, other.classes));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn compute(&self) -> Result<MetricsReport, MetricsError> {
        let k = self.classes;
        let total = self.total();
        if total == 0 {
            return Err(MetricsError::Empty);
        }
        let mut row_sums = vec![0u64; k];
        let mut col_sums = vec![0u64; k];
        for (g, row) in row_sums.iter_mut().enumerate() {
            for (p, col) in col_sums.iter_mut().enumerate() {
                let c = self.get(g, p);
                *row += c;
                *col += c;
            }
        }
        let mut per_class_iou = Vec::with_capacity(k);
        let mut per_class_acc = Vec::with_capacity(k);
        let mut correct = 0u64;
        for x in 0..k {
            let tp = self.get(x, x);
            correct += tp;
            let fn_ = row_sums[x] - tp;
            let fp = col_sums[x] - tp;
            let union = tp + fp + fn_;
            per_class_iou.push((union > 0).then(|| 100.0 * tp as f64 / union as f64));
            per_class_acc.push((tp + fn_ > 0).then(|| 100.0 * tp as f64 / (tp + fn_) as f64));
        }
        Ok(MetricsReport {
            aacc: 100.0 * correct as f64 / total as f64,
            macc: mean_present(&per_class_acc),
            miou: mean_present(&per_class_iou),
            per_class_iou,
            per_class_acc,
        })
    }
}

fn mean_present(values: &[Option<f64>]) -> f64 {
    let (sum, n) = values
        .iter()
        .flatten()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// `None` marks a class with no support (zero union for IoU, no
/// ground-truth pixels for accuracy).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub per_class_iou: Vec<Option<f64>>,
    pub per_class_acc: Vec<Option<f64>>,
    #[serde(rename = "aAcc")]
    pub aacc: f64,
    #[serde(rename = "mAcc")]
    pub macc: f64,
    #[serde(rename = "mIoU")]
    pub miou: f64,
}

impl MetricsReport {
    /// Human-readable table with two decimals.
    pub fn table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"));
        let mut out = format!("{:>6} {:>8} {:>8}\n", "class", "IoU", "Acc");
        for (x, (iou, acc)) in self
            .per_class_iou
            .iter()
            .zip(&self.per_class_acc)
            .enumerate()
        {
            out.push_str(&format!("{x:>6} {:>8} {:>8}\n", fmt(*iou), fmt(*acc)));
        }
        out.push_str(&format!(
            "aAcc {:.2}  mAcc {:.2}  mIoU {:.2}\n",
            self.aacc, self.macc, self.miou
        ));
        out
    }
}
