//! `pulmo cam`: Score-CAM overlays and localization scores for a trained
//! classifier checkpoint.

use std::fs;

use pulmo_core::cam::{heatmap_to_image, localization_score, score_cam, write_overlay};
use pulmo_core::error::Error;
use pulmo_core::image::{load_dataset, write_pgm, Class, DatasetLayout, Sample};
use pulmo_core::nn::{predict_class, Model, Task};
use pulmo_core::tensor::Tensor;

use crate::experiment::{normalize_sample, read_stats, resize_sample, stats_sidecar};
use crate::settings::Settings;
use crate::CmdResult;

pub struct CamOptions {
    /// Explicit sample ids; empty means "first `count` per class".
    pub ids: Vec<String>,
    pub count: usize,
    pub misclassified_only: bool,
    /// Compute localization scores (requires masks).
    pub localization: bool,
    pub alpha: f64,
}

impl Default for CamOptions {
    fn default() -> Self {
        CamOptions {
            ids: Vec::new(),
            count: 8,
            misclassified_only: false,
            localization: false,
            alpha: 0.5,
        }
    }
}

pub fn run(settings: &Settings, options: &CamOptions) -> CmdResult {
    let config = settings.model_config()?;
    if config.task != Task::Classification {
        return Err(Error::Config(format!(
            "cam needs a classifier family, got {}",
            settings.model
        ))
        .into());
    }
    let ckpt = settings
        .segmentation_checkpoint
        .as_ref()
        .ok_or_else(|| Error::Config("cam requires a checkpoint (checkpoint key)".into()))?;
    let model: Model<f32> = Model::build(&config, 0)?;
    model.load(ckpt)?;
    let stats = read_stats(&stats_sidecar(ckpt))?;
    let layer = match &settings.cam_layer {
        Some(layer) => layer.clone(),
        None => model
            .conv_layer_ids()
            .last()
            .cloned()
            .ok_or_else(|| Error::Config("model has no conv layers".into()))?,
    };

    let remask = settings.input == "segmented";
    let dataset = load_dataset(&settings.data_root, DatasetLayout::Classification)?;
    let selected: Vec<&Sample> = if options.ids.is_empty() {
        let mut picks = Vec::new();
        for class in [Class::Normal, Class::Tb] {
            picks.extend(
                dataset
                    .samples
                    .iter()
                    .filter(|s| s.label == Some(class))
                    .take(options.count),
            );
        }
        picks
    } else {
        let mut picks = Vec::new();
        for id in &options.ids {
            let sample = dataset
                .samples
                .iter()
                .find(|s| &s.id == id)
                .ok_or_else(|| Error::Lookup {
                    wanted: id.clone(),
                    valid: dataset.samples.iter().take(8).map(|s| s.id.clone()).collect(),
                })?;
            picks.push(sample);
        }
        picks
    };

    let out = &settings.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    settings.echo_into(out)?;

    let size = settings.input_size;
    let mut csv = String::from("id,truth,predicted,p_tb,localization\n");
    let mut rows = 0usize;
    for sample in selected {
        if options.localization && sample.mask.is_none() {
            return Err(Error::Usage(format!(
                "localization requested but sample {:?} has no mask",
                sample.id
            ))
            .into());
        }
        let resized = resize_sample(sample, size)?;
        let prepared = normalize_sample(&resized, &stats, remask)?;
        let input =
            Tensor::<f32>::from_vec(&[1, 1, size, size], prepared.image.real_pixels())?;
        let (probs, predicted) = predict_class(&model, &input)?;
        let truth = sample.label.expect("labeled").index();
        if options.misclassified_only && predicted == truth {
            continue;
        }

        let heatmap = score_cam(&model, &input, &layer, truth)?;
        write_overlay(
            &heatmap,
            &resized.image,
            options.alpha,
            &out.join(format!("cam_{}.ppm", sample.id)),
        )?;
        write_pgm(&heatmap_to_image(&heatmap), &out.join(format!("heat_{}.pgm", sample.id)))?;

        let localization = match (&options.localization, &prepared.mask) {
            (true, Some(mask)) => format!("{:.6}", localization_score(&heatmap, mask)?),
            _ => String::new(),
        };
        csv.push_str(&format!(
            "{},{},{},{:.6},{}\n",
            sample.id,
            truth,
            predicted,
            probs[Class::Tb.index()],
            localization
        ));
        rows += 1;
    }
    let csv_path = out.join("localization.csv");
    fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;
    println!("cam: wrote {rows} overlays (layer {layer}) under {}", out.display());
    Ok(())
}
