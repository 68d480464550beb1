//! Stratified k-fold plans reproducing the split arithmetic of the study
//! protocol, and cross-fold aggregation.

use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::rng::SplitMix64;

/// Within-class sample indices of one class in one fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// One cross-validation round, per class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub per_class: Vec<ClassSplit>,
}

/// A full k-fold plan. Test folds partition each class; per fold, validation
/// takes floor(20%) of the non-test portion and train the remainder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<FoldSplit>,
}

/// Build a stratified fold plan for the given class sizes.
///
/// Per class: indices are shuffled once with a seed derived from
/// (seed, class); the shuffled order is cut into k test blocks whose sizes
/// differ by at most one (larger blocks first); for each fold, validation is
/// the leading floor(0.2 * non-test) of the remaining order and train the
/// rest.
pub fn make_fold_plan(class_sizes: &[usize], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Usage(format!("k must be at least 2, got {k}")));
    }
    if class_sizes.is_empty() {
        return Err(Error::Usage("make_fold_plan: no classes".into()));
    }
    for (c, &size) in class_sizes.iter().enumerate() {
        if size < k {
            return Err(Error::Usage(format!(
                "class {c} has {size} samples, fewer than k = {k}"
            )));
        }
    }

    let mut shuffled_per_class: Vec<Vec<usize>> = Vec::with_capacity(class_sizes.len());
    for (c, &size) in class_sizes.iter().enumerate() {
        let mut order: Vec<usize> = (0..size).collect();
        let mut rng = SplitMix64::derive(seed, c as u64);
        rng.shuffle(&mut order);
        shuffled_per_class.push(order);
    }

    let mut folds = Vec::with_capacity(k);
    for fold in 0..k {
        let mut per_class = Vec::with_capacity(class_sizes.len());
        for (c, &size) in class_sizes.iter().enumerate() {
            let order = &shuffled_per_class[c];
            let base = size / k;
            let rem = size % k;
            let len = base + usize::from(fold < rem);
            let start = fold * base + fold.min(rem);
            let test: Vec<usize> = order[start..start + len].to_vec();
            let rest: Vec<usize> = order[..start]
                .iter()
                .chain(&order[start + len..])
                .copied()
                .collect();
            let val_len = rest.len() / 5;
            per_class.push(ClassSplit {
                validation: rest[..val_len].to_vec(),
                train: rest[val_len..].to_vec(),
                test,
            });
        }
        folds.push(FoldSplit { per_class });
    }
    Ok(FoldPlan { k, seed, folds })
}

/// Per-metric mean and population standard deviation across folds.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub entries: Vec<(String, f64, f64)>,
}

impl Aggregate {
    pub fn get(&self, key: &str) -> Option<(f64, f64)> {
        self.entries.iter().find(|(k, _, _)| k == key).map(|(_, m, s)| (*m, *s))
    }
}

/// Aggregate fold reports: arithmetic mean and population std per metric key.
pub fn aggregate_folds(reports: &[MetricsReport]) -> Result<Aggregate> {
    if reports.is_empty() {
        return Err(Error::Usage("aggregate_folds: no reports".into()));
    }
    let keys: Vec<String> = reports[0].entries().iter().map(|(k, _)| k.clone()).collect();
    let mut sums = vec![0.0f64; keys.len()];
    let mut sumsq = vec![0.0f64; keys.len()];
    for report in reports {
        let entries = report.entries();
        if entries.len() != keys.len()
            || entries.iter().zip(&keys).any(|((k, _), want)| k != want)
        {
            return Err(Error::Usage("aggregate_folds: metric keys differ across folds".into()));
        }
        for (i, (_, v)) in entries.iter().enumerate() {
            sums[i] += v;
            sumsq[i] += v * v;
        }
    }
    let n = reports.len() as f64;
    let entries = keys
        .into_iter()
        .enumerate()
        .map(|(i, key)| {
            let mean = sums[i] / n;
            let var = (sumsq[i] / n - mean * mean).max(0.0);
            (key, mean, var.sqrt())
        })
        .collect();
    Ok(Aggregate { entries })
}
