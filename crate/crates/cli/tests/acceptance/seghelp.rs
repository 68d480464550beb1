//! Training-based acceptance helpers: the segmentation learning run, the
//! segmentation-helps property, and the Score-CAM reference check.

use std::path::Path;
use std::process::Command;

use pulmo_core::cam::{localization_score, score_cam_detailed};
use pulmo_core::image::{apply_mask, dataset_stats, zscore_normalize, Class, Dataset, Sample};
use pulmo_core::nn::{
    build_classifier, capture_activations, fit, predict_class, Family, Model, ModelConfig,
    TrainSchedule,
};
use pulmo_core::rng::SplitMix64;
use pulmo_core::synth::{gen_sample, SpuriousCue, SynthConfig};
use pulmo_core::tensor::optim::OptimizerConfig;
use pulmo_core::tensor::Tensor;

use crate::util::{pulmo, read_csv_cell};

pub struct SegmentationReport {
    pub unet_dice: f64,
    pub modified_dice: f64,
}

fn run_segment_train(data: &Path, out: &Path, model: &str) {
    let status = Command::new(pulmo())
        .args([
            "segment-train",
            "--data",
            data.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--model",
            model,
            "--input-size",
            "64",
            "--base-channels",
            "8",
            "--depth",
            "3",
            "--epochs",
            "12",
            "--batch-size",
            "32",
            "--patience",
            "5",
            "--k-folds",
            "5",
            "--seed",
            "100",
        ])
        .status()
        .expect("run pulmo segment-train");
    assert!(status.success(), "segment-train {model} failed");
}

/// Criterion 4: both U-Nets on 250 synthetic samples (200 train+val / 50
/// test per fold), 5 folds, 12 epochs.
pub fn run_segmentation_experiment() -> SegmentationReport {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let status = Command::new(pulmo())
        .args([
            "synth",
            "--out",
            data.to_str().unwrap(),
            "--n-per-class",
            "125",
            "--seed",
            "41",
        ])
        .status()
        .expect("run pulmo synth");
    assert!(status.success(), "synth failed");

    let unet_out = dir.path().join("unet");
    run_segment_train(&data, &unet_out, "unet");
    let unet_dice = read_csv_cell(&unet_out.join("segmentation_metrics.csv"), "mean", "dice");

    let modified_out = dir.path().join("modified");
    run_segment_train(&data, &modified_out, "modified_unet");
    let modified_dice =
        read_csv_cell(&modified_out.join("segmentation_metrics.csv"), "mean", "dice");

    SegmentationReport { unet_dice, modified_dice }
}

#[derive(Debug)]
pub struct CueOutcome {
    pub seed: u64,
    pub whole_accuracy: f64,
    pub segmented_accuracy: f64,
    pub whole_localization: f64,
    pub segmented_localization: f64,
}

struct CueData {
    train: Dataset,
    val: Dataset,
    test: Dataset,
    /// Cue-carrying TB samples of the train part, prepared like the
    /// training inputs: the Fig-11 situation (the whole-image model
    /// classifies them correctly through the out-of-lung cue).
    cam_subjects: Vec<Sample>,
}

fn cue_config(seed: u64) -> SynthConfig {
    SynthConfig {
        n_per_class: 300,
        n_test_per_class: 100,
        spurious_cue: SpuriousCue::FlippedAtTest,
        seed,
        ..SynthConfig::default()
    }
}

/// Generate the flipped-cue dataset and prepare one input variant:
/// normalized whole images, or normalized mask-gated images.
fn prepare_variant(seed: u64, segmented: bool) -> CueData {
    let config = cue_config(seed);
    let mut train_raw: Vec<Sample> = Vec::new();
    let mut test_raw: Vec<Sample> = Vec::new();
    for class in [Class::Normal, Class::Tb] {
        for index in 0..400 {
            let (image, mask, row) = gen_sample(&config, class, index);
            let mut sample = Sample::new(row.id, image.to_real());
            if segmented {
                sample.image = apply_mask(&sample.image, &mask).unwrap();
            }
            sample.mask = Some(mask);
            sample.label = Some(class);
            if index < 300 {
                train_raw.push(sample);
            } else {
                test_raw.push(sample);
            }
        }
    }

    let stats = dataset_stats(train_raw.iter().map(|s| &s.image)).unwrap();
    let finish = |mut s: Sample| -> Sample {
        s.image = zscore_normalize(&s.image, &stats);
        if segmented {
            s.image = apply_mask(&s.image, s.mask.as_ref().unwrap()).unwrap();
        }
        s
    };
    let cam_subjects: Vec<Sample> = train_raw
        .iter()
        .filter(|s| s.label == Some(Class::Tb))
        .take(25)
        .cloned()
        .map(&finish)
        .collect();
    let mut train_all: Vec<Sample> = train_raw.into_iter().map(&finish).collect();
    let test: Vec<Sample> = test_raw.into_iter().map(&finish).collect();

    // 20% of the training part becomes validation, stratified by a seeded
    // shuffle within each class half (train_all holds normals then tbs).
    let mut rng = SplitMix64::derive(seed, 0x5E67);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for half in 0..2 {
        let mut idxs: Vec<usize> = (half * 300..(half + 1) * 300).collect();
        rng.shuffle(&mut idxs);
        for (pos, &i) in idxs.iter().enumerate() {
            if pos < 60 {
                val.push(train_all[i].clone());
            } else {
                train.push(train_all[i].clone());
            }
        }
    }
    train_all.clear();
    CueData {
        train: Dataset { samples: train },
        val: Dataset { samples: val },
        test: Dataset { samples: test },
        cam_subjects,
    }
}

fn classifier_config() -> ModelConfig {
    let mut config = ModelConfig::new(Family::PlainCnn);
    config.depth = 3;
    config.base_channels = 8;
    config.input_size = (64, 64);
    config
}

/// Train one variant and return (test accuracy, mean localization over the
/// first 25 TB test images).
fn run_variant(seed: u64, segmented: bool) -> (f64, f64) {
    let data = prepare_variant(seed, segmented);
    let model: Model<f32> = build_classifier(&classifier_config(), seed).unwrap();
    let schedule = TrainSchedule {
        max_epochs: 15,
        batch_size: 32,
        patience: 5,
        optimizer: OptimizerConfig::default(),
        seed,
    };
    fit(&model, &data.train, &data.val, &schedule).unwrap();

    let mut correct = 0usize;
    for sample in &data.test.samples {
        let input =
            Tensor::<f32>::from_vec(&[1, 1, 64, 64], sample.image.real_pixels()).unwrap();
        let (_, label) = predict_class(&model, &input).unwrap();
        if label == sample.label.unwrap().index() {
            correct += 1;
        }
    }
    let accuracy = correct as f64 / data.test.len() as f64;

    let layer = model.conv_layer_ids().last().unwrap().clone();
    let mut loc_sum = 0.0;
    let mut loc_n = 0usize;
    for sample in &data.cam_subjects {
        let input =
            Tensor::<f32>::from_vec(&[1, 1, 64, 64], sample.image.real_pixels()).unwrap();
        let (map, _) = score_cam_detailed(&model, &input, &layer, Class::Tb.index()).unwrap();
        loc_sum += localization_score(&map, sample.mask.as_ref().unwrap()).unwrap();
        loc_n += 1;
    }
    (accuracy, loc_sum / loc_n as f64)
}

/// Criterion 5: flipped-cue runs over three seeds; whole and segmented
/// variants train in parallel.
pub fn run_segmentation_helps(seeds: &[u64]) -> Vec<CueOutcome> {
    seeds
        .iter()
        .map(|&seed| {
            let (whole, segmented) = std::thread::scope(|scope| {
                let whole = scope.spawn(move || run_variant(seed, false));
                let segmented = scope.spawn(move || run_variant(seed, true));
                (whole.join().expect("whole run"), segmented.join().expect("segmented run"))
            });
            CueOutcome {
                seed,
                whole_accuracy: whole.0,
                whole_localization: whole.1,
                segmented_accuracy: segmented.0,
                segmented_localization: segmented.1,
            }
        })
        .collect()
}

/// Criterion 6: independently coded Score-CAM reference on a fixed
/// 2-channel toy model. Returns the worst per-pixel deviation.
pub fn score_cam_reference_check() -> f64 {
    let mut config = classifier_config();
    config.depth = 1;
    config.base_channels = 2;
    config.input_size = (8, 8);
    config.dropout_rate = 0.0;
    let model: Model<f32> = build_classifier(&config, 2024).unwrap();
    let mut rng = SplitMix64::new(31);
    let pixels: Vec<f32> = (0..64).map(|_| rng.uniform(-1.0, 2.0) as f32).collect();
    let image = Tensor::<f32>::from_vec(&[1, 1, 8, 8], pixels.clone()).unwrap();

    let (map, weights) = score_cam_detailed(&model, &image, "block1", 1).unwrap();
    let weight_sum: f64 = weights.iter().sum();
    assert!((weight_sum - 1.0).abs() < 1e-6, "weights sum to {weight_sum}");
    assert!(map.values.iter().all(|&v| (0.0..=1.0).contains(&v)));

    // reference: steps 1-6 written out directly
    let acts = capture_activations(&model, &image, "block1").unwrap();
    let (_, channels, ah, aw) = (1usize, acts.shape().d(1), acts.shape().d(2), acts.shape().d(3));
    assert_eq!(channels, 2);
    let act = acts.values();

    let upsample = |plane: &[f32]| -> Vec<f64> {
        // bilinear, half-pixel centers, to 8x8
        let (h, w, oh, ow) = (ah, aw, 8usize, 8usize);
        let sy = h as f64 / oh as f64;
        let sx = w as f64 / ow as f64;
        let mut out = Vec::with_capacity(oh * ow);
        for y in 0..oh {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
            let (y0, wy) = (fy.floor() as usize, fy.fract());
            let y1 = (y0 + 1).min(h - 1);
            for x in 0..ow {
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
                let (x0, wx) = (fx.floor() as usize, fx.fract());
                let x1 = (x0 + 1).min(w - 1);
                let top = plane[y0 * w + x0] as f64 * (1.0 - wx) + plane[y0 * w + x1] as f64 * wx;
                let bot = plane[y1 * w + x0] as f64 * (1.0 - wx) + plane[y1 * w + x1] as f64 * wx;
                out.push(top * (1.0 - wy) + bot * wy);
            }
        }
        out
    };

    let mut ups = Vec::new();
    let mut scores = Vec::new();
    for k in 0..channels {
        let up = upsample(&act[k * ah * aw..(k + 1) * ah * aw]);
        let lo = up.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = up.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(hi > lo, "toy model produced a constant channel");
        let masked: Vec<f32> = pixels
            .iter()
            .zip(&up)
            .map(|(&p, &u)| p * (((u - lo) / (hi - lo)) as f32))
            .collect();
        let inp = Tensor::<f32>::from_vec(&[1, 1, 8, 8], masked).unwrap();
        let (probs, _) = predict_class(&model, &inp).unwrap();
        scores.push(probs[1]);
        ups.push(up);
    }
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|&s| (s - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    let mut combined = vec![0.0f64; 64];
    for k in 0..channels {
        for (c, &u) in combined.iter_mut().zip(&ups[k]) {
            *c += exps[k] / z * u;
        }
    }
    for v in &mut combined {
        *v = v.max(0.0);
    }
    let hi = combined.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = combined.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(hi > 0.0);
    let mut worst = 0.0f64;
    for (got, &c) in map.values.iter().zip(&combined) {
        let want = (c - lo) / (hi - lo);
        worst = worst.max((*got as f64 - want).abs());
    }
    worst
}
