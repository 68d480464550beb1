//! Mini-batch training with early stopping, and inference helpers.

use crate::error::{Error, Result};
use crate::image::{BinaryMask, Dataset};
use crate::metrics::segmentation_metrics;
use crate::rng::SplitMix64;
use crate::tensor::optim::{OptimizerConfig, SgdMomentum};
use crate::tensor::ops::*;
use crate::tensor::pointwise::Mode;
use crate::tensor::{backward, Scalar, Tape, Tensor};

use super::{Forward, Model, Task};

/// Training schedule: epochs, batching, early stopping and the run seed.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSchedule {
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Consecutive epochs without validation-loss improvement tolerated
    /// before stopping.
    pub patience: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

impl TrainSchedule {
    /// Defaults per task: 50 epochs for segmentation, 15 for classification;
    /// batch 32, patience 5, SGD momentum 0.9 at learning rate 1e-3.
    pub fn for_task(task: Task, seed: u64) -> TrainSchedule {
        TrainSchedule {
            max_epochs: match task {
                Task::Segmentation => 50,
                Task::Classification => 15,
            },
            batch_size: 32,
            patience: 5,
            optimizer: OptimizerConfig::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.max_epochs < 1 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if self.patience < 1 || self.patience > self.max_epochs {
            return Err(Error::Config(format!(
                "patience must be in 1..=max_epochs ({}), got {}",
                self.max_epochs, self.patience
            )));
        }
        self.optimizer.validate()
    }
}

/// Loss/metric trace of one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub train_loss: f64,
    pub val_loss: f64,
    /// Dice for segmentation, accuracy for classification.
    pub val_metric: f64,
}

/// Per-epoch history of a fit run. `best_epoch` is 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Patience-based stopping on validation loss.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    best: f64,
    best_epoch: usize,
    since_best: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> EarlyStopper {
        EarlyStopper { patience, best: f64::INFINITY, best_epoch: 0, since_best: 0 }
    }

    /// Record the validation loss of `epoch` (1-based). Returns true when
    /// this epoch improved on the best loss.
    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> bool {
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.since_best = 0;
            true
        } else {
            self.since_best += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.since_best >= self.patience
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Samples prepared as flat rows for batching.
struct Prepared {
    rows: Vec<Vec<f32>>,
    /// Flattened 0/1 mask per sample (segmentation) or class index
    /// (classification).
    mask_rows: Vec<Vec<f32>>,
    labels: Vec<usize>,
}

fn prepare<S: Scalar>(model: &Model<S>, data: &Dataset, what: &str) -> Result<Prepared> {
    let config = model.config();
    let (h, w) = config.input_size;
    let mut rows = Vec::with_capacity(data.len());
    let mut mask_rows = Vec::new();
    let mut labels = Vec::new();
    for sample in &data.samples {
        if sample.image.height != h || sample.image.width != w {
            return Err(Error::Shape {
                op: "fit",
                detail: format!(
                    "{what} sample {:?} is {}x{}, model expects {h}x{w}",
                    sample.id, sample.image.height, sample.image.width
                ),
            });
        }
        rows.push(sample.image.real_pixels());
        match config.task {
            Task::Segmentation => {
                let mask = sample.mask.as_ref().ok_or_else(|| {
                    Error::Usage(format!("{what} sample {:?} has no mask", sample.id))
                })?;
                if mask.height != h || mask.width != w {
                    return Err(Error::Shape {
                        op: "fit",
                        detail: format!("mask of {:?} is {}x{}", sample.id, mask.height, mask.width),
                    });
                }
                mask_rows.push(mask.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect());
            }
            Task::Classification => {
                let label = sample.label.ok_or_else(|| {
                    Error::Usage(format!("{what} sample {:?} has no label", sample.id))
                })?;
                labels.push(label.index());
            }
        }
    }
    Ok(Prepared { rows, mask_rows, labels })
}

fn batch_input<S: Scalar>(prepared: &Prepared, idxs: &[usize], h: usize, w: usize) -> Tensor<S> {
    let mut data = Vec::with_capacity(idxs.len() * h * w);
    for &i in idxs {
        data.extend(prepared.rows[i].iter().map(|&v| S::from_f64(v as f64)));
    }
    Tensor::from_parts(
        crate::tensor::Shape::new(&[idxs.len(), 1, h, w]).unwrap(),
        data,
        false,
    )
}

fn batch_target<S: Scalar>(
    prepared: &Prepared,
    idxs: &[usize],
    task: Task,
    h: usize,
    w: usize,
) -> Tensor<S> {
    match task {
        Task::Segmentation => {
            let mut data = Vec::with_capacity(idxs.len() * h * w);
            for &i in idxs {
                data.extend(prepared.mask_rows[i].iter().map(|&v| S::from_f64(v as f64)));
            }
            Tensor::from_parts(
                crate::tensor::Shape::new(&[idxs.len(), 1, h, w]).unwrap(),
                data,
                false,
            )
        }
        Task::Classification => {
            let data: Vec<S> =
                idxs.iter().map(|&i| S::from_f64(prepared.labels[i] as f64)).collect();
            Tensor::from_parts(crate::tensor::Shape::new(&[idxs.len()]).unwrap(), data, false)
        }
    }
}

fn loss_kind(task: Task) -> LossKind {
    match task {
        Task::Segmentation => LossKind::BinaryCeOnProbabilities,
        Task::Classification => LossKind::SoftmaxCeOnLogits,
    }
}

/// Validation pass: mean loss plus the task metric (mean per-sample Dice at
/// threshold 0.5, or accuracy).
fn evaluate<S: Scalar>(
    model: &Model<S>,
    prepared: &Prepared,
    batch_size: usize,
) -> Result<(f64, f64)> {
    let config = model.config();
    let (h, w) = config.input_size;
    let n = prepared.rows.len();
    let mut loss_sum = 0.0f64;
    let mut metric_acc = 0.0f64;
    let mut rng = SplitMix64::new(0); // eval path draws nothing
    let idxs: Vec<usize> = (0..n).collect();
    for chunk in idxs.chunks(batch_size) {
        let input = batch_input::<S>(prepared, chunk, h, w);
        let target = batch_target::<S>(prepared, chunk, config.task, h, w);
        let mut tape = Tape::disabled();
        let mut fw = Forward::new(&mut tape, Mode::Eval, &mut rng);
        let out = model.forward(&mut fw, &input)?;
        let mut loss_tape = Tape::disabled();
        let l = loss(&mut loss_tape, &out, &target, loss_kind(config.task))?;
        loss_sum += l.item().as_f64() * chunk.len() as f64;

        match config.task {
            Task::Segmentation => {
                let probs = out.data();
                let hw = h * w;
                for (bi, &i) in chunk.iter().enumerate() {
                    let pred_bits: Vec<bool> =
                        probs[bi * hw..(bi + 1) * hw].iter().map(|&v| v.as_f64() >= 0.5).collect();
                    let pred = BinaryMask::new(w, h, pred_bits)?;
                    let truth_bits: Vec<bool> =
                        prepared.mask_rows[i].iter().map(|&v| v >= 0.5).collect();
                    let truth = BinaryMask::new(w, h, truth_bits)?;
                    metric_acc += segmentation_metrics(&pred, &truth)?.dice.unwrap_or(0.0);
                }
            }
            Task::Classification => {
                let logits = out.data();
                let k = config.num_classes;
                for (bi, &i) in chunk.iter().enumerate() {
                    let row = &logits[bi * k..(bi + 1) * k];
                    let mut best = 0usize;
                    for (j, v) in row.iter().enumerate() {
                        if *v > row[best] {
                            best = j;
                        }
                    }
                    if best == prepared.labels[i] {
                        metric_acc += 1.0;
                    }
                }
            }
        }
    }
    Ok((loss_sum / n as f64, metric_acc / n as f64))
}

/// Train `model` on `train`, early-stopping on `val` loss, and leave the
/// model holding its best-epoch parameters.
///
/// Per epoch the training set is reshuffled from the schedule seed and run
/// in mini-batches (the final short batch included). Training stops at
/// `max_epochs` or after `patience` consecutive epochs without validation
/// improvement.
pub fn fit<S: Scalar>(
    model: &Model<S>,
    train: &Dataset,
    val: &Dataset,
    schedule: &TrainSchedule,
) -> Result<TrainHistory> {
    schedule.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Usage("fit: train and validation sets must be non-empty".into()));
    }
    let config = model.config().clone();
    let (h, w) = config.input_size;
    let train_prepared = prepare(model, train, "train")?;
    let val_prepared = prepare(model, val, "validation")?;

    let mut optimizer = SgdMomentum::new(schedule.optimizer, model.parameters())?;
    let mut rng = SplitMix64::derive(schedule.seed, 0xF17);
    let mut stopper = EarlyStopper::new(schedule.patience);
    let mut history = Vec::new();
    let mut best_snapshot = model.snapshot();
    let mut stopped_early = false;

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=schedule.max_epochs {
        rng.shuffle(&mut order);
        let mut train_loss = 0.0f64;
        for (batch_idx, chunk) in order.chunks(schedule.batch_size).enumerate() {
            let input = batch_input::<S>(&train_prepared, chunk, h, w);
            let target = batch_target::<S>(&train_prepared, chunk, config.task, h, w);
            let mut tape = Tape::new();
            let mut fw = Forward::new(&mut tape, Mode::Train, &mut rng);
            let out = model.forward(&mut fw, &input)?;
            let l = loss(&mut tape, &out, &target, loss_kind(config.task))?;
            let l_value = l.item().as_f64();
            if !l_value.is_finite() {
                return Err(Error::Divergence { epoch, batch: batch_idx });
            }
            train_loss += l_value * chunk.len() as f64;
            backward(&mut tape, &l)?;
            optimizer.step(model.parameters())?;
        }
        train_loss /= train.len() as f64;

        let (val_loss, val_metric) = evaluate(model, &val_prepared, schedule.batch_size)?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence { epoch, batch: 0 });
        }
        history.push(EpochStats { train_loss, val_loss, val_metric });
        if stopper.observe(epoch, val_loss) {
            best_snapshot = model.snapshot();
        }
        if stopper.should_stop() {
            stopped_early = epoch < schedule.max_epochs;
            break;
        }
    }

    model.restore(&best_snapshot)?;
    Ok(TrainHistory { epochs: history, best_epoch: stopper.best_epoch(), stopped_early })
}

fn image_tensor<S: Scalar>(model: &Model<S>, image: &Tensor<S>) -> Result<Tensor<S>> {
    let (h, w) = model.config().input_size;
    match image.rank() {
        4 => Ok(image.clone()),
        2 if image.shape().d(0) == h && image.shape().d(1) == w => Ok(Tensor::from_parts(
            crate::tensor::Shape::new(&[1, 1, h, w]).unwrap(),
            image.values(),
            false,
        )),
        _ => Err(Error::Shape {
            op: "predict",
            detail: format!("expected HxW or N,C,H,W image, got {}", image.shape()),
        }),
    }
}

/// Threshold a segmentation model's sigmoid output into a mask.
pub fn predict_mask<S: Scalar>(
    model: &Model<S>,
    image: &Tensor<S>,
    threshold: f64,
) -> Result<BinaryMask> {
    if model.config().task != Task::Segmentation {
        return Err(Error::TaskMismatch {
            expected: "segmentation",
            actual: model.config().task.name(),
        });
    }
    let input = image_tensor(model, image)?;
    let mut tape = Tape::disabled();
    let mut rng = SplitMix64::new(0);
    let mut fw = Forward::new(&mut tape, Mode::Eval, &mut rng);
    let probs = model.forward(&mut fw, &input)?;
    let (h, w) = model.config().input_size;
    let bits: Vec<bool> = probs.data()[..h * w].iter().map(|&v| v.as_f64() >= threshold).collect();
    BinaryMask::new(w, h, bits)
}

/// Softmax probabilities and argmax label (ties resolve to the lower index).
pub fn predict_class<S: Scalar>(model: &Model<S>, image: &Tensor<S>) -> Result<(Vec<f64>, usize)> {
    if model.config().task != Task::Classification {
        return Err(Error::TaskMismatch {
            expected: "classification",
            actual: model.config().task.name(),
        });
    }
    let input = image_tensor(model, image)?;
    let mut tape = Tape::disabled();
    let mut rng = SplitMix64::new(0);
    let mut fw = Forward::new(&mut tape, Mode::Eval, &mut rng);
    let logits = model.forward(&mut fw, &input)?;
    let probs = softmax_channels(&mut tape, &logits)?;
    let row: Vec<f64> = probs.data()[..model.config().num_classes]
        .iter()
        .map(|v| v.as_f64())
        .collect();
    let mut label = 0usize;
    for (j, v) in row.iter().enumerate() {
        if *v > row[label] {
            label = j;
        }
    }
    Ok((row, label))
}

/// Eval-mode forward that returns the named layer's post-activation output
/// without touching model state.
pub fn capture_activations<S: Scalar>(
    model: &Model<S>,
    image: &Tensor<S>,
    layer_id: &str,
) -> Result<Tensor<S>> {
    if !model.conv_layer_ids().iter().any(|id| id == layer_id) {
        return Err(Error::Lookup {
            wanted: layer_id.to_string(),
            valid: model.conv_layer_ids().to_vec(),
        });
    }
    let input = image_tensor(model, image)?;
    let mut tape = Tape::disabled();
    let mut rng = SplitMix64::new(0);
    let mut fw = Forward::with_capture(&mut tape, Mode::Eval, &mut rng, layer_id);
    model.forward(&mut fw, &input)?;
    fw.take_captured().ok_or_else(|| Error::Lookup {
        wanted: layer_id.to_string(),
        valid: model.conv_layer_ids().to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{GrayImage, Sample};
    use crate::nn::{build_classifier, build_unet, Family, Model, ModelConfig};

    #[test]
    fn patience_sequence_from_protocol_example() {
        let mut stopper = EarlyStopper::new(5);
        let losses = [1.0, 0.9, 0.95, 0.96, 0.97, 0.98, 0.99];
        let mut stopped_at = None;
        for (i, &l) in losses.iter().enumerate() {
            stopper.observe(i + 1, l);
            if stopper.should_stop() {
                stopped_at = Some(i + 1);
                break;
            }
        }
        assert_eq!(stopped_at, Some(7));
        assert_eq!(stopper.best_epoch(), 2);
    }

    fn toy_seg_dataset(n: usize, size: usize) -> Dataset {
        let mut rng = SplitMix64::new(31);
        let mut samples = Vec::new();
        for i in 0..n {
            let mut pixels = vec![0.1f32; size * size];
            let mut bits = vec![false; size * size];
            // bright square in a varying location
            let off = rng.below(size / 2);
            for y in off..off + size / 2 {
                for x in off..off + size / 2 {
                    pixels[y * size + x] = 0.9;
                    bits[y * size + x] = true;
                }
            }
            let mut s = Sample::new(
                format!("s{i:03}"),
                GrayImage::from_reals(size, size, pixels).unwrap(),
            );
            s.mask = Some(BinaryMask::new(size, size, bits).unwrap());
            samples.push(s);
        }
        Dataset { samples }
    }

    fn tiny_unet(size: usize, seed: u64) -> Model<f32> {
        let mut config = ModelConfig::new(Family::Unet);
        config.depth = 1;
        config.base_channels = 2;
        config.input_size = (size, size);
        config.dropout_rate = 0.0;
        build_unet(&config, seed).unwrap()
    }

    #[test]
    fn max_epochs_one_runs_exactly_one_epoch() {
        let data = toy_seg_dataset(6, 8);
        let model = tiny_unet(8, 1);
        let schedule = TrainSchedule {
            max_epochs: 1,
            batch_size: 4,
            patience: 1,
            optimizer: OptimizerConfig::default(),
            seed: 3,
        };
        let history = fit(&model, &data, &data, &schedule).unwrap();
        assert_eq!(history.epochs.len(), 1);
        assert!(!history.stopped_early);
    }

    #[test]
    fn fit_is_deterministic_in_seed() {
        let data = toy_seg_dataset(8, 8);
        let schedule = TrainSchedule {
            max_epochs: 3,
            batch_size: 4,
            patience: 3,
            optimizer: OptimizerConfig::default(),
            seed: 77,
        };
        let run = || {
            let model = tiny_unet(8, 5);
            let history = fit(&model, &data, &data, &schedule).unwrap();
            (history, model.snapshot())
        };
        let (h1, p1) = run();
        let (h2, p2) = run();
        assert_eq!(h1, h2);
        assert_eq!(p1, p2);
    }

    #[test]
    fn one_step_on_one_sample_decreases_its_loss() {
        let data = toy_seg_dataset(1, 8);
        let model = tiny_unet(8, 11);
        let schedule = TrainSchedule {
            max_epochs: 1,
            batch_size: 1,
            patience: 1,
            optimizer: OptimizerConfig { learning_rate: 1e-4, momentum: 0.0 },
            seed: 0,
        };
        let prepared = prepare(&model, &data, "train").unwrap();
        let (before, _) = evaluate(&model, &prepared, 1).unwrap();
        fit(&model, &data, &data, &schedule).unwrap();
        // fit restores the best epoch, which after one epoch is that epoch
        let (after, _) = evaluate(&model, &prepared, 1).unwrap();
        assert!(
            after < before,
            "loss should strictly decrease: before {before}, after {after}"
        );
    }

    #[test]
    fn empty_dataset_is_a_usage_error() {
        let model = tiny_unet(8, 0);
        let schedule = TrainSchedule::for_task(Task::Segmentation, 0);
        let empty = Dataset::default();
        let data = toy_seg_dataset(2, 8);
        assert!(matches!(fit(&model, &empty, &data, &schedule), Err(Error::Usage(_))));
        assert!(matches!(fit(&model, &data, &empty, &schedule), Err(Error::Usage(_))));
    }

    #[test]
    fn predict_mask_with_huge_negative_final_bias_is_empty() {
        let model = tiny_unet(8, 2);
        for (name, t) in model.parameters() {
            if name == "final.bias" {
                t.copy_from(&[-10.0]).unwrap();
            }
        }
        let image = Tensor::<f32>::zeros(&[1, 1, 8, 8]);
        let mask = predict_mask(&model, &image, 0.5).unwrap();
        assert_eq!(mask.count_ones(), 0);
        // threshold 0 makes everything foreground
        let all = predict_mask(&model, &image, 0.0).unwrap();
        assert_eq!(all.count_ones(), 64);
    }

    #[test]
    fn predict_class_tie_breaks_to_lower_index() {
        let mut config = ModelConfig::new(Family::PlainCnn);
        config.depth = 1;
        config.base_channels = 2;
        config.input_size = (4, 4);
        let model: Model<f32> = build_classifier(&config, 4).unwrap();
        // zero the head so logits tie at the bias
        for (name, t) in model.parameters() {
            if name.starts_with("head.") {
                t.copy_from(&vec![0.0; t.numel()]).unwrap();
            }
        }
        let image = Tensor::<f32>::zeros(&[1, 1, 4, 4]);
        let (probs, label) = predict_class(&model, &image).unwrap();
        assert!((probs[0] - 0.5).abs() < 1e-6);
        assert!((probs[1] - 0.5).abs() < 1e-6);
        assert_eq!(label, 0);
    }

    #[test]
    fn task_mismatch_is_reported() {
        let model = tiny_unet(8, 2);
        let image = Tensor::<f32>::zeros(&[1, 1, 8, 8]);
        assert!(matches!(
            predict_class(&model, &image),
            Err(Error::TaskMismatch { .. })
        ));
    }

    #[test]
    fn capture_is_pure_and_validates_ids() {
        let model = tiny_unet(8, 6);
        let image = Tensor::<f32>::filled(&[1, 1, 8, 8], 0.5);
        let a = capture_activations(&model, &image, "enc1.conv1").unwrap();
        let b = capture_activations(&model, &image, "enc1.conv1").unwrap();
        assert_eq!(a.values(), b.values());
        match capture_activations(&model, &image, "nope") {
            Err(Error::Lookup { valid, .. }) => assert!(valid.contains(&"final".to_string())),
            other => panic!("expected lookup error, got {other:?}"),
        }
    }

    #[test]
    fn first_layer_capture_of_zero_image_with_zero_bias_is_zero() {
        let model = tiny_unet(8, 6);
        // biases start at zero, so a zero image stays zero through conv+relu
        let image = Tensor::<f32>::zeros(&[1, 1, 8, 8]);
        let out = capture_activations(&model, &image, "enc1.conv1").unwrap();
        assert!(out.values().iter().all(|&v| v == 0.0));
    }
}
