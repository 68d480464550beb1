//! Shared machinery of the training commands: preprocessing, fold
//! orchestration, evaluation and CSV emission.

use std::fs;
use std::path::{Path, PathBuf};

use pulmo_core::error::{Error, Result};
use pulmo_core::image::{
    apply_mask, resize_bilinear, zscore_normalize, BinaryMask, Class, Dataset,
    DatasetStats, Sample,
};
use pulmo_core::metrics::{segmentation_metrics, ClassSplit, FoldPlan};
use pulmo_core::nn::{Model, TrainHistory};
use pulmo_core::tensor::ops::{loss, LossKind};
use pulmo_core::tensor::{Tape, Tensor};

/// Fold-level parallelism: PULMO_THREADS caps the number of concurrently
/// training folds (defaults to the machine's parallelism).
pub fn fold_threads(k: usize) -> usize {
    let hw = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let cap = std::env::var("PULMO_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v >= 1)
        .unwrap_or(hw);
    cap.min(k).max(1)
}

/// Run `job` for folds 0..k, at most [`fold_threads`] at a time. Results come
/// back in fold order regardless of scheduling.
pub fn run_folds<R, F>(k: usize, job: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(usize) -> Result<R> + Sync,
{
    let threads = fold_threads(k);
    let mut results: Vec<Option<R>> = (0..k).map(|_| None).collect();
    let folds: Vec<usize> = (0..k).collect();
    let job = &job;
    for wave in folds.chunks(threads) {
        let wave_results: Vec<(usize, Result<R>)> = std::thread::scope(|scope| {
            let handles: Vec<_> = wave
                .iter()
                .map(|&fold| (fold, scope.spawn(move || job(fold))))
                .collect();
            handles
                .into_iter()
                .map(|(fold, h)| (fold, h.join().expect("fold job panicked")))
                .collect()
        });
        for (fold, result) in wave_results {
            results[fold] = Some(result?);
        }
    }
    Ok(results.into_iter().map(|r| r.expect("fold result present")).collect())
}

/// Resize one sample to `size` (bilinear image, nearest mask).
pub fn resize_sample(sample: &Sample, size: usize) -> Result<Sample> {
    let mut out = sample.clone();
    out.image = resize_bilinear(&sample.image, size, size)?;
    if let Some(mask) = &sample.mask {
        out.mask = Some(mask.resize_nearest(size, size)?);
    }
    Ok(out)
}

/// Z-score normalize a sample; with `remask` the (resized) mask is
/// re-applied afterwards so out-of-lung pixels are exactly zero in
/// normalized space.
pub fn normalize_sample(sample: &Sample, stats: &DatasetStats, remask: bool) -> Result<Sample> {
    let mut out = sample.clone();
    out.image = zscore_normalize(&sample.image, stats);
    if remask {
        let mask = out
            .mask
            .as_ref()
            .ok_or_else(|| Error::Usage(format!("sample {:?} has no mask to re-apply", out.id)))?;
        out.image = apply_mask(&out.image, mask)?;
    }
    Ok(out)
}

/// Training statistics of one fold, stored beside its checkpoint so apply
/// and CAM runs normalize exactly like training did.
pub fn write_stats(path: &Path, stats: &DatasetStats) -> Result<()> {
    fs::write(path, format!("mean,std\n{},{}\n", stats.mean, stats.std))
        .map_err(|e| Error::io(path, e))
}

pub fn read_stats(path: &Path) -> Result<DatasetStats> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let line = text.lines().nth(1).ok_or_else(|| {
        Error::Config(format!("{}: expected a data row under the header", path.display()))
    })?;
    let mut parts = line.split(',');
    let mean: f64 = parts
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Config(format!("{}: bad mean", path.display())))?;
    let std: f64 = parts
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Config(format!("{}: bad std", path.display())))?;
    Ok(DatasetStats { mean, std })
}

/// The conventional sidecar path of a checkpoint's training statistics:
/// `fold1.ckpt` -> `fold1_stats.csv`.
pub fn stats_sidecar(ckpt: &Path) -> PathBuf {
    let stem = ckpt.file_stem().and_then(|s| s.to_str()).unwrap_or("ckpt");
    ckpt.with_file_name(format!("{stem}_stats.csv"))
}

pub fn write_history(path: &Path, history: &TrainHistory) -> Result<()> {
    let mut out = String::from("epoch,train_loss,val_loss,val_metric\n");
    for (i, e) in history.epochs.iter().enumerate() {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6}\n",
            i + 1,
            e.train_loss,
            e.val_loss,
            e.val_metric
        ));
    }
    out.push_str(&format!("# best_epoch={} stopped_early={}\n", history.best_epoch, history.stopped_early));
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Gather dataset samples for one class split.
pub fn resolve<'a>(dataset: &'a Dataset, globals: &[usize]) -> Vec<&'a Sample> {
    globals.iter().map(|&i| &dataset.samples[i]).collect()
}

/// Map a fold plan's within-class indices onto dataset indices.
/// `by_class[c]` lists the dataset indices of class c in load order.
pub fn to_global(split: &ClassSplit, by_class: &[usize]) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let pick = |list: &[usize]| list.iter().map(|&i| by_class[i]).collect::<Vec<usize>>();
    (pick(&split.train), pick(&split.validation), pick(&split.test))
}

/// Mean test loss and mean per-sample accuracy/IoU/Dice of a segmentation
/// model over prepared (resized + normalized) samples.
pub struct SegTestReport {
    pub loss: f64,
    pub accuracy: f64,
    pub iou: f64,
    pub dice: f64,
}

pub fn segmentation_test<S: pulmo_core::tensor::Scalar>(
    model: &Model<S>,
    samples: &[Sample],
    threshold: f64,
) -> Result<SegTestReport> {
    if samples.is_empty() {
        return Err(Error::Usage("segmentation_test: no samples".into()));
    }
    let (h, w) = model.config().input_size;
    let mut loss_sum = 0.0;
    let mut acc = 0.0;
    let mut iou = 0.0;
    let mut dice = 0.0;
    for sample in samples {
        let truth = sample
            .mask
            .as_ref()
            .ok_or_else(|| Error::Usage(format!("sample {:?} has no mask", sample.id)))?;
        let data: Vec<S> = sample
            .image
            .real_pixels()
            .iter()
            .map(|&v| S::from_f64(v as f64))
            .collect();
        let input = Tensor::from_vec(&[1, 1, h, w], data)?;

        let mut tape = Tape::disabled();
        let mut rng = pulmo_core::rng::SplitMix64::new(0);
        let mut fw = pulmo_core::nn::Forward::new(&mut tape, pulmo_core::tensor::pointwise::Mode::Eval, &mut rng);
        let probs = model.forward(&mut fw, &input)?;
        let target: Vec<S> = truth.bits.iter().map(|&b| S::from_f64(f64::from(b as u8))).collect();
        let target = Tensor::from_vec(&[1, 1, h, w], target)?;
        let mut ltape = Tape::disabled();
        loss_sum += loss(&mut ltape, &probs, &target, LossKind::BinaryCeOnProbabilities)?
            .item()
            .as_f64();

        let bits: Vec<bool> = probs.data().iter().map(|v| v.as_f64() >= threshold).collect();
        let pred = BinaryMask::new(w, h, bits)?;
        let report = segmentation_metrics(&pred, truth)?;
        acc += report.accuracy;
        iou += report.iou.unwrap_or(0.0);
        dice += report.dice.unwrap_or(0.0);
    }
    let n = samples.len() as f64;
    Ok(SegTestReport { loss: loss_sum / n, accuracy: acc / n, iou: iou / n, dice: dice / n })
}

/// Auto copies for minority balancing: round(majority/minority) - 1, or 0
/// when the training classes are already balanced.
pub fn auto_copies(n_majority: usize, n_minority: usize) -> usize {
    if n_minority == 0 || n_majority <= n_minority {
        return 0;
    }
    let ratio = n_majority as f64 / n_minority as f64;
    ((ratio.round() as usize).saturating_sub(1)).min(12)
}

/// Global dataset indices per class, in load order.
pub fn indices_by_class(dataset: &Dataset) -> [Vec<usize>; 2] {
    [dataset.class_indices(Class::Normal), dataset.class_indices(Class::Tb)]
}

/// Fold plan resolved against a classification dataset.
pub struct FoldSets {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn classification_fold_sets(plan: &FoldPlan, fold: usize, by_class: &[Vec<usize>; 2]) -> FoldSets {
    let mut train = Vec::new();
    let mut validation = Vec::new();
    let mut test = Vec::new();
    for (c, split) in plan.folds[fold].per_class.iter().enumerate() {
        let (tr, va, te) = to_global(split, &by_class[c]);
        train.extend(tr);
        validation.extend(va);
        test.extend(te);
    }
    FoldSets { train, validation, test }
}
