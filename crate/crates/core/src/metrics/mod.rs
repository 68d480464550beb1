//! Evaluation metrics, ROC curves and the cross-validation fold engine.

mod folds;
mod roc;

pub use folds::{aggregate_folds, make_fold_plan, Aggregate, ClassSplit, FoldPlan, FoldSplit};
pub use roc::{auc, average_roc, roc_curve, RocPoint};

use crate::error::{Error, Result};
use crate::image::BinaryMask;

/// Binary confusion counts. Positive class = TB for classification,
/// foreground pixel for segmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn new(tp: usize, tn: usize, fp: usize, fn_: usize) -> ConfusionMatrix {
        ConfusionMatrix { tp, tn, fp, fn_ }
    }

    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// Merge counts from another matrix (e.g. summing folds).
    pub fn merge(&mut self, other: &ConfusionMatrix) {
        self.tp += other.tp;
        self.tn += other.tn;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

/// Count TP/TN/FP/FN of a prediction run. `positive_label` selects which
/// label plays the positive role.
pub fn confusion<L: PartialEq>(
    predictions: &[L],
    truths: &[L],
    positive_label: &L,
) -> Result<ConfusionMatrix> {
    if predictions.len() != truths.len() {
        return Err(Error::Usage(format!(
            "confusion: {} predictions vs {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for (p, t) in predictions.iter().zip(truths) {
        match (p == positive_label, t == positive_label) {
            (true, true) => cm.tp += 1,
            (false, false) => cm.tn += 1,
            (true, false) => cm.fp += 1,
            (false, true) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

/// Precision, sensitivity, specificity and F1 of one class.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClassMetrics {
    pub precision: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub f1: f64,
    pub support: usize,
}

/// The metric bundle of one evaluation: overall accuracy, per-class values,
/// support-weighted averages, and (for segmentation) IoU and Dice.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    pub accuracy: f64,
    /// (class name, metrics); binary reports hold ["normal", "tb"].
    pub per_class: Vec<(String, ClassMetrics)>,
    pub weighted: ClassMetrics,
    pub iou: Option<f64>,
    pub dice: Option<f64>,
    /// Names of metrics whose 0/0 ratio was defined as 0.
    pub zero_denominator_flags: Vec<String>,
}

impl MetricsReport {
    /// Flat (key, value) view with a stable order, for CSV rows and fold
    /// aggregation.
    pub fn entries(&self) -> Vec<(String, f64)> {
        let mut out = vec![("accuracy".to_string(), self.accuracy)];
        for (name, m) in &self.per_class {
            out.push((format!("{name}_precision"), m.precision));
            out.push((format!("{name}_sensitivity"), m.sensitivity));
            out.push((format!("{name}_specificity"), m.specificity));
            out.push((format!("{name}_f1"), m.f1));
        }
        out.push(("weighted_precision".to_string(), self.weighted.precision));
        out.push(("weighted_sensitivity".to_string(), self.weighted.sensitivity));
        out.push(("weighted_specificity".to_string(), self.weighted.specificity));
        out.push(("weighted_f1".to_string(), self.weighted.f1));
        if let Some(iou) = self.iou {
            out.push(("iou".to_string(), iou));
        }
        if let Some(dice) = self.dice {
            out.push(("dice".to_string(), dice));
        }
        out
    }
}

fn ratio(num: usize, den: usize, name: &str, flags: &mut Vec<String>) -> f64 {
    if den == 0 {
        flags.push(name.to_string());
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn class_metrics_from(
    tp: usize,
    tn: usize,
    fp: usize,
    fn_: usize,
    name: &str,
    flags: &mut Vec<String>,
) -> ClassMetrics {
    ClassMetrics {
        precision: ratio(tp, tp + fp, &format!("{name}_precision"), flags),
        sensitivity: ratio(tp, tp + fn_, &format!("{name}_sensitivity"), flags),
        specificity: ratio(tn, tn + fp, &format!("{name}_specificity"), flags),
        f1: ratio(2 * tp, 2 * tp + fn_ + fp, &format!("{name}_f1"), flags),
        support: tp + fn_,
    }
}

/// Binary classification metrics. Per-class values are computed by swapping
/// the positive role; weighted averages use true class supports as weights.
pub fn classification_metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Usage("classification_metrics: zero total".into()));
    }
    let mut flags = Vec::new();
    // positive class = tb; negative view swaps tp<->tn and fp<->fn
    let tb = class_metrics_from(cm.tp, cm.tn, cm.fp, cm.fn_, "tb", &mut flags);
    let normal = class_metrics_from(cm.tn, cm.tp, cm.fn_, cm.fp, "normal", &mut flags);

    let weight_sum = (tb.support + normal.support) as f64;
    let weigh = |f: fn(&ClassMetrics) -> f64| {
        (f(&tb) * tb.support as f64 + f(&normal) * normal.support as f64) / weight_sum
    };
    let weighted = ClassMetrics {
        precision: weigh(|m| m.precision),
        sensitivity: weigh(|m| m.sensitivity),
        specificity: weigh(|m| m.specificity),
        f1: weigh(|m| m.f1),
        support: total,
    };

    Ok(MetricsReport {
        accuracy: (cm.tp + cm.tn) as f64 / total as f64,
        per_class: vec![("normal".to_string(), normal), ("tb".to_string(), tb)],
        weighted,
        iou: None,
        dice: None,
        zero_denominator_flags: flags,
    })
}

/// Pixelwise segmentation metrics: accuracy, IoU and Dice, plus the full
/// per-class bundle on the pixel confusion counts. Two empty masks compare
/// as perfectly similar (IoU = Dice = 1).
pub fn segmentation_metrics(pred: &BinaryMask, truth: &BinaryMask) -> Result<MetricsReport> {
    if pred.width != truth.width || pred.height != truth.height {
        return Err(Error::Shape {
            op: "segmentation_metrics",
            detail: format!(
                "mask extents differ: {}x{} vs {}x{}",
                pred.width, pred.height, truth.width, truth.height
            ),
        });
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &t) in pred.bits.iter().zip(&truth.bits) {
        match (p, t) {
            (true, true) => cm.tp += 1,
            (false, false) => cm.tn += 1,
            (true, false) => cm.fp += 1,
            (false, true) => cm.fn_ += 1,
        }
    }
    segmentation_metrics_from_counts(&cm)
}

/// Segmentation metrics straight from pixel confusion counts.
pub fn segmentation_metrics_from_counts(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let mut report = classification_metrics(cm)?;
    report.per_class[0].0 = "background".to_string();
    report.per_class[1].0 = "foreground".to_string();
    let union = cm.tp + cm.fn_ + cm.fp;
    let (iou, dice) = if union == 0 {
        (1.0, 1.0)
    } else {
        (
            cm.tp as f64 / union as f64,
            2.0 * cm.tp as f64 / (2 * cm.tp + cm.fn_ + cm.fp) as f64,
        )
    };
    report.iou = Some(iou);
    report.dice = Some(dice);
    Ok(report)
}
