//! Rough training-step timing for budget planning.

use std::time::Instant;

use pulmo_core::image::{BinaryMask, Dataset, GrayImage, Sample};
use pulmo_core::nn::{build_classifier, build_unet, fit, Family, ModelConfig, TrainSchedule};
use pulmo_core::rng::SplitMix64;
use pulmo_core::tensor::optim::OptimizerConfig;

fn seg_data(n: usize, size: usize) -> Dataset {
    let mut rng = SplitMix64::new(1);
    let mut samples = Vec::new();
    for i in 0..n {
        let pixels: Vec<f32> = (0..size * size).map(|_| rng.next_f64() as f32).collect();
        let bits: Vec<bool> = (0..size * size).map(|_| rng.next_f64() < 0.3).collect();
        let mut s = Sample::new(format!("s{i}"), GrayImage::from_reals(size, size, pixels).unwrap());
        s.mask = Some(BinaryMask::new(size, size, bits).unwrap());
        samples.push(s);
    }
    Dataset { samples }
}

fn main() {
    // plain U-Net depth 3 base 8 @ 64
    let mut config = ModelConfig::new(Family::Unet);
    config.depth = 3;
    config.base_channels = 8;
    config.input_size = (64, 64);
    let model = build_unet::<f32>(&config, 1).unwrap();
    let data = seg_data(64, 64);
    let schedule = TrainSchedule {
        max_epochs: 1,
        batch_size: 32,
        patience: 1,
        optimizer: OptimizerConfig::default(),
        seed: 2,
    };
    let t = Instant::now();
    fit(&model, &data, &data, &schedule).unwrap();
    println!("unet d3b8@64: 64 train imgs 1 epoch (plus 64-img eval): {:?}", t.elapsed());

    let mut config = ModelConfig::new(Family::ModifiedUnet);
    config.depth = 3;
    config.base_channels = 8;
    config.input_size = (64, 64);
    let model = pulmo_core::nn::build_modified_unet::<f32>(&config, 1).unwrap();
    let t = Instant::now();
    fit(&model, &data, &data, &schedule).unwrap();
    println!("modified d3b8@64: same: {:?}", t.elapsed());

    // classifier plain depth3 base8 @64
    let mut config = ModelConfig::new(Family::PlainCnn);
    config.depth = 3;
    config.base_channels = 8;
    config.input_size = (64, 64);
    let model = build_classifier::<f32>(&config, 1).unwrap();
    let mut data = seg_data(128, 64);
    for (i, s) in data.samples.iter_mut().enumerate() {
        s.label = Some(if i % 2 == 0 { pulmo_core::image::Class::Normal } else { pulmo_core::image::Class::Tb });
        s.mask = None;
    }
    let t = Instant::now();
    fit(&model, &data, &data, &schedule).unwrap();
    println!("plain_cnn d3b8@64: 128 train imgs 1 epoch: {:?}", t.elapsed());
}
