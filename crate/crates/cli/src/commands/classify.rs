//! `pulmo classify`: k-fold TB classification on whole or segmented images,
//! with minority balancing, per-fold metrics, averaged ROC and the summed
//! confusion matrix.

use std::fs;
use std::path::Path;

use pulmo_core::augment::balance_augment;
use pulmo_core::error::{Error, Result};
use pulmo_core::image::{dataset_stats, load_dataset, Class, Dataset, DatasetLayout};
use pulmo_core::metrics::{
    aggregate_folds, average_roc, classification_metrics, confusion, make_fold_plan, roc_curve,
    ConfusionMatrix, MetricsReport, RocPoint,
};
use pulmo_core::nn::{fit, predict_class, Model, Task};
use pulmo_core::tensor::Tensor;

use crate::experiment::{
    auto_copies, classification_fold_sets, indices_by_class, normalize_sample, resize_sample,
    run_folds, write_history, write_stats,
};
use crate::settings::Settings;
use crate::CmdResult;

pub struct FoldOutcome {
    pub report: MetricsReport,
    pub curve: Vec<RocPoint>,
    pub cm: ConfusionMatrix,
}

fn segmented_input(settings: &Settings) -> Result<bool> {
    match settings.input.as_str() {
        "whole" => Ok(false),
        "segmented" => Ok(true),
        other => Err(Error::Config(format!(
            "input must be whole or segmented, got {other:?}"
        ))),
    }
}

fn train_fold(
    settings: &Settings,
    dataset: &Dataset,
    plan: &pulmo_core::metrics::FoldPlan,
    by_class: &[Vec<usize>; 2],
    fold: usize,
) -> Result<FoldOutcome> {
    let config = settings.model_config()?;
    let remask = segmented_input(settings)?;
    let sets = classification_fold_sets(plan, fold, by_class);

    // balance the training portion only, before any resizing
    let train_raw = Dataset {
        samples: sets.train.iter().map(|&i| dataset.samples[i].clone()).collect(),
    };
    let n_tb = train_raw.class_indices(Class::Tb).len();
    let n_normal = train_raw.class_indices(Class::Normal).len();
    let (minority, copies) = if n_tb <= n_normal {
        (Class::Tb, parse_copies(settings, n_normal, n_tb)?)
    } else {
        (Class::Normal, parse_copies(settings, n_tb, n_normal)?)
    };
    let train_raw = if copies > 0 {
        balance_augment(&train_raw, minority, copies, settings.seed)?
    } else {
        train_raw
    };

    let size = settings.input_size;
    let resize_all = |samples: &[pulmo_core::image::Sample]| -> Result<Vec<_>> {
        samples.iter().map(|s| resize_sample(s, size)).collect()
    };
    let train_resized = resize_all(&train_raw.samples)?;
    let val_resized = resize_all(
        &sets.validation.iter().map(|&i| dataset.samples[i].clone()).collect::<Vec<_>>(),
    )?;
    let test_resized = resize_all(
        &sets.test.iter().map(|&i| dataset.samples[i].clone()).collect::<Vec<_>>(),
    )?;

    let stats = dataset_stats(train_resized.iter().map(|s| &s.image))?;
    let normalize_all = |samples: &[pulmo_core::image::Sample]| -> Result<Dataset> {
        let out: Result<Vec<_>> =
            samples.iter().map(|s| normalize_sample(s, &stats, remask)).collect();
        Ok(Dataset { samples: out? })
    };
    let train_set = normalize_all(&train_resized)?;
    let val_set = normalize_all(&val_resized)?;
    let test_set = normalize_all(&test_resized)?;

    let fold_seed = settings.seed + fold as u64;
    let model: Model<f32> = Model::build(&config, fold_seed)?;
    let schedule = settings.schedule(Task::Classification, fold)?;
    let history = fit(&model, &train_set, &val_set, &schedule)?;

    // test pass: probabilities for ROC, argmax labels for the confusion
    let mut scores = Vec::with_capacity(test_set.len());
    let mut truths = Vec::with_capacity(test_set.len());
    let mut predictions = Vec::with_capacity(test_set.len());
    for sample in &test_set.samples {
        let input =
            Tensor::<f32>::from_vec(&[1, 1, size, size], sample.image.real_pixels())?;
        let (probs, label) = predict_class(&model, &input)?;
        scores.push(probs[Class::Tb.index()]);
        predictions.push(label);
        truths.push(sample.label.expect("labeled").index());
    }
    let cm = confusion(&predictions, &truths, &Class::Tb.index())?;
    let report = classification_metrics(&cm)?;
    let truth_bools: Vec<bool> = truths.iter().map(|&t| t == Class::Tb.index()).collect();
    let curve = roc_curve(&scores, &truth_bools)?;

    let out = &settings.output_dir;
    let ckpt = out.join(format!("fold{}.ckpt", fold + 1));
    model.save(&ckpt)?;
    write_stats(&crate::experiment::stats_sidecar(&ckpt), &stats)?;
    write_history(&out.join(format!("fold{}_history.csv", fold + 1)), &history)?;

    Ok(FoldOutcome { report, curve, cm })
}

fn parse_copies(settings: &Settings, n_majority: usize, n_minority: usize) -> Result<usize> {
    match settings.augment_copies.as_str() {
        "auto" => Ok(auto_copies(n_majority, n_minority)),
        other => other.parse::<usize>().map_err(|_| {
            Error::Config(format!("augment_copies must be 'auto' or an integer, got {other:?}"))
        }),
    }
}

pub fn run(settings: &Settings) -> CmdResult {
    let config = settings.model_config()?;
    if config.task != Task::Classification {
        return Err(Error::Config(format!(
            "classify needs a classifier family, got {}",
            settings.model
        ))
        .into());
    }
    let remask = segmented_input(settings)?;
    fs::create_dir_all(&settings.output_dir)
        .map_err(|e| Error::io(&settings.output_dir, e))?;
    settings.echo_into(&settings.output_dir)?;

    let dataset = load_dataset(&settings.data_root, DatasetLayout::Classification)?;
    if remask {
        let missing: Vec<String> = dataset
            .samples
            .iter()
            .filter(|s| s.mask.is_none())
            .map(|s| format!("no mask for {}", s.id))
            .collect();
        if !missing.is_empty() {
            return Err(Error::Manifest(missing).into());
        }
    }

    let by_class = indices_by_class(&dataset);
    let plan = make_fold_plan(
        &[by_class[0].len(), by_class[1].len()],
        settings.k_folds,
        settings.seed,
    )?;

    let outcomes = run_folds(settings.k_folds, |fold| {
        train_fold(settings, &dataset, &plan, &by_class, fold)
    })?;

    // per-fold + aggregate metrics
    let reports: Vec<MetricsReport> = outcomes.iter().map(|o| o.report.clone()).collect();
    let aggregate = aggregate_folds(&reports)?;
    let metrics_path = settings.output_dir.join("metrics.csv");
    write_metrics_csv(&metrics_path, &reports, &aggregate)?;

    // vertically averaged ROC
    let curves: Vec<Vec<RocPoint>> = outcomes.iter().map(|o| o.curve.clone()).collect();
    let averaged = average_roc(&curves)?;
    let roc_path = settings.output_dir.join("roc_avg.csv");
    let mut roc_csv = String::from("fpr,tpr\n");
    for (f, t) in &averaged {
        roc_csv.push_str(&format!("{f:.6},{t:.6}\n"));
    }
    fs::write(&roc_path, roc_csv).map_err(|e| Error::io(&roc_path, e))?;

    // summed confusion matrix across folds
    let mut total = ConfusionMatrix::default();
    for o in &outcomes {
        total.merge(&o.cm);
    }
    let cm_path = settings.output_dir.join("confusion.csv");
    fs::write(
        &cm_path,
        format!(
            "tp,tn,fp,fn\n{},{},{},{}\n",
            total.tp, total.tn, total.fp, total.fn_
        ),
    )
    .map_err(|e| Error::io(&cm_path, e))?;

    for (fold, o) in outcomes.iter().enumerate() {
        println!(
            "fold {}: accuracy {:.4} w_precision {:.4} w_sensitivity {:.4} w_f1 {:.4} w_specificity {:.4}",
            fold + 1,
            o.report.accuracy,
            o.report.weighted.precision,
            o.report.weighted.sensitivity,
            o.report.weighted.f1,
            o.report.weighted.specificity,
        );
    }
    if let Some((mean, std)) = aggregate.get("accuracy") {
        println!("mean accuracy: {mean:.4} (std {std:.4})");
    }
    println!("wrote {}", metrics_path.display());
    Ok(())
}

fn write_metrics_csv(
    path: &Path,
    reports: &[MetricsReport],
    aggregate: &pulmo_core::metrics::Aggregate,
) -> Result<()> {
    let keys: Vec<String> = reports[0].entries().iter().map(|(k, _)| k.clone()).collect();
    let mut out = format!("fold,{}\n", keys.join(","));
    for (fold, report) in reports.iter().enumerate() {
        let values: Vec<String> =
            report.entries().iter().map(|(_, v)| format!("{v:.6}")).collect();
        out.push_str(&format!("{},{}\n", fold + 1, values.join(",")));
    }
    let means: Vec<String> =
        aggregate.entries.iter().map(|(_, m, _)| format!("{m:.6}")).collect();
    let stds: Vec<String> =
        aggregate.entries.iter().map(|(_, _, s)| format!("{s:.6}")).collect();
    out.push_str(&format!("mean,{}\n", means.join(",")));
    out.push_str(&format!("std,{}\n", stds.join(",")));
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
