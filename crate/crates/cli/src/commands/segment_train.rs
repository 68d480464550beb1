//! `pulmo segment-train`: k-fold U-Net training on a segmentation-layout
//! dataset, emitting per-fold checkpoints and a loss/accuracy/IoU/Dice table.

use std::fs;
use std::path::Path;

use pulmo_core::error::{Error, Result};
use pulmo_core::image::{dataset_stats, load_dataset, Dataset, DatasetLayout};
use pulmo_core::metrics::make_fold_plan;
use pulmo_core::nn::{fit, Model, Task};

use crate::experiment::{
    normalize_sample, resize_sample, run_folds, segmentation_test, to_global,
    write_history, write_stats, SegTestReport,
};
use crate::settings::Settings;
use crate::CmdResult;

pub struct FoldOutcome {
    pub report: SegTestReport,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

fn train_fold(
    settings: &Settings,
    dataset: &Dataset,
    plan: &pulmo_core::metrics::FoldPlan,
    fold: usize,
) -> Result<FoldOutcome> {
    let config = settings.model_config()?;
    let all: Vec<usize> = (0..dataset.len()).collect();
    let split = &plan.folds[fold].per_class[0];
    let (train_idx, val_idx, test_idx) = to_global(split, &all);

    let size = settings.input_size;
    let resized: Result<Vec<_>> =
        dataset.samples.iter().map(|s| resize_sample(s, size)).collect();
    let resized = resized?;

    let stats = dataset_stats(train_idx.iter().map(|&i| &resized[i].image))?;
    let normalize = |idx: &[usize]| -> Result<Dataset> {
        let samples: Result<Vec<_>> =
            idx.iter().map(|&i| normalize_sample(&resized[i], &stats, false)).collect();
        Ok(Dataset { samples: samples? })
    };
    let train_set = normalize(&train_idx)?;
    let val_set = normalize(&val_idx)?;
    let test_set = normalize(&test_idx)?;

    let fold_seed = settings.seed + fold as u64;
    let model: Model<f32> = Model::build(&config, fold_seed)?;
    let schedule = settings.schedule(Task::Segmentation, fold)?;
    let history = fit(&model, &train_set, &val_set, &schedule)?;

    let report = segmentation_test(&model, &test_set.samples, settings.threshold)?;

    let out = &settings.output_dir;
    let ckpt = out.join(format!("fold{}.ckpt", fold + 1));
    model.save(&ckpt)?;
    write_stats(&crate::experiment::stats_sidecar(&ckpt), &stats)?;
    write_history(&out.join(format!("fold{}_history.csv", fold + 1)), &history)?;

    Ok(FoldOutcome { report, best_epoch: history.best_epoch, epochs_run: history.epochs.len() })
}

pub fn run(settings: &Settings) -> CmdResult {
    let config = settings.model_config()?;
    if config.task != Task::Segmentation {
        return Err(Error::Config(format!(
            "segment-train needs a segmentation family, got {}",
            settings.model
        ))
        .into());
    }
    fs::create_dir_all(&settings.output_dir)
        .map_err(|e| Error::io(&settings.output_dir, e))?;
    settings.echo_into(&settings.output_dir)?;

    let dataset = load_dataset(&settings.data_root, DatasetLayout::Segmentation)?;
    let plan = make_fold_plan(&[dataset.len()], settings.k_folds, settings.seed)?;

    let outcomes = run_folds(settings.k_folds, |fold| {
        train_fold(settings, &dataset, &plan, fold)
    })?;

    let csv_path = settings.output_dir.join("segmentation_metrics.csv");
    write_metrics_csv(&csv_path, &outcomes)?;

    for (fold, o) in outcomes.iter().enumerate() {
        println!(
            "fold {}: loss {:.4} acc {:.4} iou {:.4} dice {:.4} (best epoch {}/{})",
            fold + 1,
            o.report.loss,
            o.report.accuracy,
            o.report.iou,
            o.report.dice,
            o.best_epoch,
            o.epochs_run
        );
    }
    let mean_dice: f64 =
        outcomes.iter().map(|o| o.report.dice).sum::<f64>() / outcomes.len() as f64;
    println!("mean test dice: {mean_dice:.4}");
    println!("wrote {}", csv_path.display());
    Ok(())
}

fn write_metrics_csv(path: &Path, outcomes: &[FoldOutcome]) -> Result<()> {
    let mut out = String::from("fold,test_loss,accuracy,iou,dice\n");
    for (fold, o) in outcomes.iter().enumerate() {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6}\n",
            fold + 1,
            o.report.loss,
            o.report.accuracy,
            o.report.iou,
            o.report.dice
        ));
    }
    let n = outcomes.len() as f64;
    let col = |f: fn(&SegTestReport) -> f64| -> (f64, f64) {
        let mean = outcomes.iter().map(|o| f(&o.report)).sum::<f64>() / n;
        let var = outcomes.iter().map(|o| (f(&o.report) - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    };
    let (lm, ls) = col(|r| r.loss);
    let (am, as_) = col(|r| r.accuracy);
    let (im, is) = col(|r| r.iou);
    let (dm, ds) = col(|r| r.dice);
    out.push_str(&format!("mean,{lm:.6},{am:.6},{im:.6},{dm:.6}\n"));
    out.push_str(&format!("std,{ls:.6},{as_:.6},{is:.6},{ds:.6}\n"));
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
