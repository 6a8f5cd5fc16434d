//! Binary segmentation scores from the pixel confusion matrix.
//!
//! Zero-denominator conventions: when both prediction and ground truth are
//! empty, precision, recall, F1, F2, IoU and Dice are all 1; when exactly one
//! of them is empty the affected ratios are 0.

use crate::data::Mask;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self { tp, tn, fp, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            tn: self.tn + o.tn,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MetricReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub f2: f64,
    pub iou: f64,
    pub dice: f64,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "IoU,Dice,F2,Precision,Recall,Accuracy";

    /// Values in results-table column order.
    pub fn table_row(&self) -> [f64; 6] {
        [self.iou, self.dice, self.f2, self.precision, self.recall, self.accuracy]
    }

    pub fn csv_row(&self) -> String {
        self.table_row()
            .iter()
            .map(|v| format!("{v:.6}"))
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Pixel counts of `pred` against `gt`.
pub fn confusion(pred: &Mask, gt: &Mask) -> Result<ConfusionCounts> {
    if (pred.h, pred.w) != (gt.h, gt.w) {
        return Err(Error::Shape(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.h, pred.w, gt.h, gt.w
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        match (p, g) {
            (1, 1) => c.tp += 1,
            (1, 0) => c.fp += 1,
            (0, 1) => c.fn_ += 1,
            (0, 0) => c.tn += 1,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "non-binary mask values ({p}, {g})"
                )))
            }
        }
    }
    Ok(c)
}

fn ratio(num: u64, den: u64, both_empty: bool) -> f64 {
    if den == 0 {
        if both_empty {
            1.0
        } else {
            0.0
        }
    } else {
        num as f64 / den as f64
    }
}

pub fn metrics_from_counts(c: &ConfusionCounts) -> Result<MetricReport> {
    let total = c.total();
    if total == 0 {
        return Err(Error::InvalidArgument("metrics of an empty mask".into()));
    }
    let both_empty = c.tp + c.fp + c.fn_ == 0;
    let precision = ratio(c.tp, c.tp + c.fp, both_empty);
    let recall = ratio(c.tp, c.tp + c.fn_, both_empty);
    let dice = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_, both_empty);
    let iou = ratio(c.tp, c.tp + c.fp + c.fn_, both_empty);
    let f2_den = 4.0 * precision + recall;
    let f2 = if f2_den == 0.0 {
        0.0
    } else {
        5.0 * precision * recall / f2_den
    };
    Ok(MetricReport {
        accuracy: (c.tp + c.tn) as f64 / total as f64,
        precision,
        recall,
        f1: dice,
        f2,
        iou,
        dice,
    })
}

pub fn mask_metrics(pred: &Mask, gt: &Mask) -> Result<MetricReport> {
    metrics_from_counts(&confusion(pred, gt)?)
}

/// Arithmetic mean of each field over `reports`, in order.
pub fn mean_report(reports: &[MetricReport]) -> Result<MetricReport> {
    if reports.is_empty() {
        return Err(Error::InvalidArgument("cannot average zero reports".into()));
    }
    let n = reports.len() as f64;
    let mut m = MetricReport::default();
    for r in reports {
        m.accuracy += r.accuracy;
        m.precision += r.precision;
        m.recall += r.recall;
        m.f1 += r.f1;
        m.f2 += r.f2;
        m.iou += r.iou;
        m.dice += r.dice;
    }
    m.accuracy /= n;
    m.precision /= n;
    m.recall /= n;
    m.f1 /= n;
    m.f2 /= n;
    m.iou /= n;
    m.dice /= n;
    Ok(m)
}

/// Per-image reports averaged over the set (macro average, not pooled counts).
pub fn evaluate_set(pairs: &[(Mask, Mask)]) -> Result<MetricReport> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("evaluation set is empty".into()));
    }
    let reports = pairs
        .iter()
        .map(|(pred, gt)| mask_metrics(pred, gt))
        .collect::<Result<Vec<_>>>()?;
    mean_report(&reports)
}
