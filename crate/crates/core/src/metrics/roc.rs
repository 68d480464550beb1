//! ROC curves, trapezoidal AUC, and vertical fold averaging.

use crate::error::{Error, Result};

/// One (false positive rate, true positive rate) point.
pub type RocPoint = (f64, f64);

/// ROC curve of positive-class scores: one threshold per distinct score in
/// descending order (ties share a threshold), with (0,0) and (1,1) endpoints.
pub fn roc_curve(scores: &[f64], truths: &[bool]) -> Result<Vec<RocPoint>> {
    if scores.len() != truths.len() {
        return Err(Error::Usage(format!(
            "roc_curve: {} scores vs {} truths",
            scores.len(),
            truths.len()
        )));
    }
    let pos = truths.iter().filter(|&&t| t).count();
    let neg = truths.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedRoc);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(std::cmp::Ordering::Equal));

    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        // consume the whole tie group
        while i < order.len() && scores[order[i]] == threshold {
            if truths[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    if *points.last().unwrap() != (1.0, 1.0) {
        points.push((1.0, 1.0));
    }
    Ok(points)
}

/// Area under a curve of (x, y) points ordered by x, by the trapezoidal rule.
pub fn auc(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

const AVERAGE_GRID: usize = 101;

/// TPR of a curve at the given FPR, linearly interpolating the polyline.
/// Vertical runs at one FPR resolve to their topmost TPR.
fn tpr_at(points: &[RocPoint], fpr: f64) -> f64 {
    let mut last_le = None;
    for (i, p) in points.iter().enumerate() {
        if p.0 <= fpr {
            last_le = Some(i);
        } else {
            break;
        }
    }
    match last_le {
        None => points.first().map(|p| p.1).unwrap_or(0.0),
        Some(i) if i + 1 == points.len() => points[i].1,
        Some(i) => {
            let (x0, y0) = points[i];
            let (x1, y1) = points[i + 1];
            if x1 <= x0 {
                y0
            } else {
                y0 + (y1 - y0) * (fpr - x0) / (x1 - x0)
            }
        }
    }
}

/// Vertical averaging of fold ROC curves: mean TPR interpolated on a fixed
/// grid of 101 equally spaced FPR values.
pub fn average_roc(fold_curves: &[Vec<RocPoint>]) -> Result<Vec<RocPoint>> {
    if fold_curves.is_empty() {
        return Err(Error::Usage("average_roc: no curves".into()));
    }
    let mut out = Vec::with_capacity(AVERAGE_GRID);
    for g in 0..AVERAGE_GRID {
        let fpr = g as f64 / (AVERAGE_GRID - 1) as f64;
        let mean: f64 =
            fold_curves.iter().map(|c| tpr_at(c, fpr)).sum::<f64>() / fold_curves.len() as f64;
        out.push((fpr, mean));
    }
    Ok(out)
}
