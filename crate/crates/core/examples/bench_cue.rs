//! Parameter probe for the flipped-cue experiment.

use pulmo_core::cam::{localization_score, score_cam};
use pulmo_core::image::{apply_mask, dataset_stats, zscore_normalize, Class, Dataset, Sample};
use pulmo_core::nn::{build_classifier, fit, predict_class, Family, ModelConfig, TrainSchedule};
use pulmo_core::rng::SplitMix64;
use pulmo_core::synth::{gen_sample, SpuriousCue, SynthConfig};
use pulmo_core::tensor::optim::OptimizerConfig;
use pulmo_core::tensor::Tensor;

fn variant(seed: u64, segmented: bool, epochs: usize, layer: &str) -> (f64, f64) {
    let config = SynthConfig {
        n_per_class: 300,
        n_test_per_class: 100,
        spurious_cue: SpuriousCue::FlippedAtTest,
        seed,
        ..SynthConfig::default()
    };
    let mut train_raw: Vec<Sample> = Vec::new();
    let mut test_raw: Vec<Sample> = Vec::new();
    for class in [Class::Normal, Class::Tb] {
        for index in 0..400 {
            let (image, mask, row) = gen_sample(&config, class, index);
            let mut s = Sample::new(row.id, image.to_real());
            if segmented {
                s.image = apply_mask(&s.image, &mask).unwrap();
            }
            s.mask = Some(mask);
            s.label = Some(class);
            if index < 300 { train_raw.push(s) } else { test_raw.push(s) }
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
    let train_all: Vec<Sample> = train_raw.into_iter().map(finish).collect();
    let test: Vec<Sample> = test_raw.into_iter().map(finish).collect();
    let mut rng = SplitMix64::derive(seed, 0x5E67);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for half in 0..2 {
        let mut idxs: Vec<usize> = (half * 300..(half + 1) * 300).collect();
        rng.shuffle(&mut idxs);
        for (pos, &i) in idxs.iter().enumerate() {
            if pos < 60 { val.push(train_all[i].clone()) } else { train.push(train_all[i].clone()) }
        }
    }
    let mut mc = ModelConfig::new(Family::PlainCnn);
    mc.depth = 3;
    mc.base_channels = 8;
    mc.input_size = (64, 64);
    let model = build_classifier::<f32>(&mc, seed).unwrap();
    let schedule = TrainSchedule { max_epochs: epochs, batch_size: 32, patience: 5, optimizer: OptimizerConfig::default(), seed };
    let hist = fit(&model, &Dataset { samples: train }, &Dataset { samples: val }, &schedule).unwrap();
    let mut correct = 0;
    for s in &test {
        let input = Tensor::<f32>::from_vec(&[1, 1, 64, 64], s.image.real_pixels()).unwrap();
        if predict_class(&model, &input).unwrap().1 == s.label.unwrap().index() { correct += 1 }
    }
    let acc = correct as f64 / test.len() as f64;
    // localization on cue-carrying (train-part) TB images, target class tb
    let mut loc = 0.0;
    let mut n = 0;
    for index in 0..25 {
        let (image, mask, _) = gen_sample(&config, Class::Tb, index);
        let mut img = image.to_real();
        if segmented {
            img = apply_mask(&img, &mask).unwrap();
        }
        let mut img = zscore_normalize(&img, &stats);
        if segmented {
            img = apply_mask(&img, &mask).unwrap();
        }
        let input = Tensor::<f32>::from_vec(&[1, 1, 64, 64], img.real_pixels()).unwrap();
        let map = score_cam(&model, &input, layer, 1).unwrap();
        loc += localization_score(&map, &mask).unwrap();
        n += 1;
    }
    eprintln!("  ({} epochs ran {}, best {})", if segmented { "seg" } else { "whole" }, hist.epochs.len(), hist.best_epoch);
    (acc, loc / n as f64)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|v| v.parse().ok()).unwrap_or(15);
    let layer = args.get(2).cloned().unwrap_or_else(|| "block3".to_string());
    eprintln!("epochs {epochs} layer {layer}");
    for seed in [11u64, 22] {
        let (wa, wl) = variant(seed, false, epochs, &layer);
        let (sa, sl) = variant(seed, true, epochs, &layer);
        println!("seed {seed}: whole acc {wa:.3} loc {wl:.3} | seg acc {sa:.3} loc {sl:.3} | gap {:.3}", sl - wl);
    }
}
