//! One-fold dry run of the segmentation acceptance setup.

use std::time::Instant;

use pulmo_core::image::{dataset_stats, zscore_normalize, Class, Dataset, Sample};
use pulmo_core::nn::{build_unet, fit, Family, ModelConfig, TrainSchedule};
use pulmo_core::synth::{gen_sample, SynthConfig};
use pulmo_core::tensor::optim::OptimizerConfig;

fn main() {
    let synth = SynthConfig { n_per_class: 125, ..SynthConfig::default() };
    let mut samples = Vec::new();
    for class in [Class::Normal, Class::Tb] {
        for i in 0..125 {
            let (img, mask, row) = gen_sample(&synth, class, i);
            let mut s = Sample::new(row.id, img);
            s.mask = Some(mask);
            samples.push(s);
        }
    }
    // normalize with train stats (first 200 as train+val here)
    let stats = dataset_stats(samples.iter().take(200).map(|s| &s.image)).unwrap();
    println!("stats: mean {:.4} std {:.4}", stats.mean, stats.std);
    for s in &mut samples {
        s.image = zscore_normalize(&s.image, &stats);
    }
    let test: Vec<Sample> = samples.split_off(200);
    let val: Vec<Sample> = samples.split_off(160);
    let train = samples;

    let mut config = ModelConfig::new(Family::ModifiedUnet);
    config.depth = 3;
    config.base_channels = 8;
    config.input_size = (64, 64);
    let model = pulmo_core::nn::build_modified_unet::<f32>(&config, 42).unwrap();
    let schedule = TrainSchedule {
        max_epochs: 12,
        batch_size: 32,
        patience: 5,
        optimizer: OptimizerConfig::default(),
        seed: 42,
    };
    let t = Instant::now();
    let history = fit(
        &model,
        &Dataset { samples: train },
        &Dataset { samples: val },
        &schedule,
    )
    .unwrap();
    for (i, e) in history.epochs.iter().enumerate() {
        println!(
            "epoch {:2}: train {:.4} val {:.4} dice {:.4}",
            i + 1,
            e.train_loss,
            e.val_loss,
            e.val_metric
        );
    }
    println!("best epoch {} took {:?}", history.best_epoch, t.elapsed());

    // test dice
    let mut dice_sum = 0.0;
    for s in &test {
        let img = pulmo_core::tensor::Tensor::from_vec(
            &[1, 1, 64, 64],
            s.image.real_pixels(),
        )
        .unwrap();
        let pred = pulmo_core::nn::predict_mask(&model, &img, 0.5).unwrap();
        let m = pulmo_core::metrics::segmentation_metrics(&pred, s.mask.as_ref().unwrap()).unwrap();
        dice_sum += m.dice.unwrap();
    }
    println!("test dice: {:.4}", dice_sum / test.len() as f64);
}
