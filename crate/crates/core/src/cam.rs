//! Score-CAM heat maps, mask-localization scoring and overlay rendering.
//!
//! The CAM weight of each activation channel is the target-class softmax
//! score of the input masked by that channel's normalized, upsampled map;
//! no gradients are involved.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{resize_bilinear, write_ppm, BinaryMask, GrayImage, Pixels};
use crate::nn::{capture_activations, Model, Task};
use crate::rng::SplitMix64;
use crate::tensor::ops::softmax_channels;
use crate::tensor::pointwise::Mode;
use crate::tensor::{Scalar, Shape, Tape, Tensor};

/// A per-pixel relevance map in [0,1] at input resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
    pub target_class: usize,
    pub source_layer: String,
}

impl Heatmap {
    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

/// Bilinearly upsample one activation channel to the input resolution.
fn upsample_channel(plane: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f32> {
    let img = GrayImage {
        width: w,
        height: h,
        pixels: Pixels::Real(plane.iter().map(|&v| v as f32).collect()),
    };
    resize_bilinear(&img, out_h, out_w).expect("positive extents").real_pixels()
}

/// Score-CAM:
/// 1. capture the activation maps of `layer_id` in eval mode,
/// 2. upsample each channel bilinearly to the input size,
/// 3. min-max normalize each channel to [0,1] (constant channels are
///    excluded from the weighting),
/// 4. forward the elementwise product image * normalized-map and read the
///    target-class softmax score,
/// 5. weight channels by the softmax over those scores,
/// 6. heat map = ReLU of the weighted sum of the upsampled maps, min-max
///    normalized to [0,1].
pub fn score_cam<S: Scalar>(
    model: &Model<S>,
    image: &Tensor<S>,
    layer_id: &str,
    target_class: usize,
) -> Result<Heatmap> {
    score_cam_detailed(model, image, layer_id, target_class).map(|(map, _)| map)
}

/// [`score_cam`] plus the per-channel weights of step 5 (excluded channels
/// carry weight 0; the rest sum to 1).
pub fn score_cam_detailed<S: Scalar>(
    model: &Model<S>,
    image: &Tensor<S>,
    layer_id: &str,
    target_class: usize,
) -> Result<(Heatmap, Vec<f64>)> {
    if model.config().task != Task::Classification {
        return Err(Error::TaskMismatch {
            expected: "classification",
            actual: model.config().task.name(),
        });
    }
    if target_class >= model.config().num_classes {
        return Err(Error::Usage(format!(
            "target class {target_class} out of range (num_classes = {})",
            model.config().num_classes
        )));
    }
    let (in_h, in_w) = model.config().input_size;

    let activations = capture_activations(model, image, layer_id)?;
    let (n, channels, act_h, act_w) = activations.shape().nchw("score_cam")?;
    if n != 1 {
        return Err(Error::Usage("score_cam expects a single image".into()));
    }

    let act = activations.values();
    let image_pixels: Vec<f64> = image.data().iter().map(|v| v.as_f64()).collect();

    // steps 2-3: upsample, then per-channel min-max normalization
    let mut upsampled: Vec<Vec<f32>> = Vec::with_capacity(channels);
    let mut masks: Vec<Option<Vec<f64>>> = Vec::with_capacity(channels);
    for k in 0..channels {
        let plane: Vec<f64> =
            act[k * act_h * act_w..(k + 1) * act_h * act_w].iter().map(|v| v.as_f64()).collect();
        let up = upsample_channel(&plane, act_h, act_w, in_h, in_w);
        let lo = up.iter().cloned().fold(f32::INFINITY, f32::min) as f64;
        let hi = up.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
        masks.push((hi > lo).then(|| {
            up.iter().map(|&v| (v as f64 - lo) / (hi - lo)).collect::<Vec<f64>>()
        }));
        upsampled.push(up);
    }
    if masks.iter().all(|m| m.is_none()) {
        return Err(Error::EmptyCam);
    }

    // step 4: masked forward passes
    let mut scores = vec![f64::NEG_INFINITY; channels];
    for (k, mask) in masks.iter().enumerate() {
        let Some(mask) = mask else { continue };
        let masked: Vec<S> = image_pixels
            .iter()
            .zip(mask)
            .map(|(&p, &m)| S::from_f64(p * m))
            .collect();
        let input = Tensor::from_parts(Shape::new(&[1, 1, in_h, in_w])?, masked, false);
        let mut tape = Tape::disabled();
        let mut rng = SplitMix64::new(0);
        let mut fw = crate::nn::Forward::new(&mut tape, Mode::Eval, &mut rng);
        let logits = model.forward(&mut fw, &input)?;
        let probs = softmax_channels(&mut tape, &logits)?;
        scores[k] = probs.data()[target_class].as_f64();
    }

    // step 5: softmax over the masked-input scores
    let max_score = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores
        .iter()
        .map(|&s| if s.is_finite() { (s - max_score).exp() } else { 0.0 })
        .collect();
    let norm: f64 = exps.iter().sum();
    let weights: Vec<f64> = exps.iter().map(|&e| e / norm).collect();

    // step 6: weighted sum, ReLU, min-max to [0,1]
    let mut combined = vec![0.0f64; in_h * in_w];
    for (k, up) in upsampled.iter().enumerate() {
        let wk = weights[k];
        if wk == 0.0 {
            continue;
        }
        for (c, &v) in combined.iter_mut().zip(up) {
            *c += wk * v as f64;
        }
    }
    for v in &mut combined {
        *v = v.max(0.0);
    }
    let hi = combined.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = combined.iter().cloned().fold(f64::INFINITY, f64::min);
    let values: Vec<f32> = if hi <= 0.0 {
        vec![0.0; combined.len()] // nothing positive anywhere
    } else if hi > lo {
        combined.iter().map(|&v| ((v - lo) / (hi - lo)) as f32).collect()
    } else {
        vec![1.0; combined.len()] // positive constant map
    };

    Ok((
        Heatmap {
            width: in_w,
            height: in_h,
            values,
            target_class,
            source_layer: layer_id.to_string(),
        },
        weights,
    ))
}

/// Fraction of total heat-map mass inside the mask.
pub fn localization_score(heatmap: &Heatmap, mask: &BinaryMask) -> Result<f64> {
    if heatmap.width != mask.width || heatmap.height != mask.height {
        return Err(Error::Shape {
            op: "localization_score",
            detail: format!(
                "heatmap {}x{} vs mask {}x{}",
                heatmap.width, heatmap.height, mask.width, mask.height
            ),
        });
    }
    let mut total = 0.0f64;
    let mut inside = 0.0f64;
    for (&v, &m) in heatmap.values.iter().zip(&mask.bits) {
        let v = v as f64;
        total += v;
        if m {
            inside += v;
        }
    }
    if total <= 0.0 {
        return Err(Error::UndefinedScore);
    }
    Ok(inside / total)
}

/// The fixed 256-entry blue -> cyan -> yellow -> red lookup table.
///
/// Piecewise linear with breakpoints at entries 0, 85, 170 and 255, rounding
/// half away from zero, so renders are bit-reproducible.
pub fn colormap() -> [[u8; 3]; 256] {
    let anchors: [(f64, [f64; 3]); 4] = [
        (0.0, [0.0, 0.0, 255.0]),
        (85.0, [0.0, 255.0, 255.0]),
        (170.0, [255.0, 255.0, 0.0]),
        (255.0, [255.0, 0.0, 0.0]),
    ];
    let mut table = [[0u8; 3]; 256];
    for (i, entry) in table.iter_mut().enumerate() {
        let x = i as f64;
        let seg = anchors.windows(2).find(|w| x <= w[1].0).expect("x <= 255");
        let (x0, c0) = seg[0];
        let (x1, c1) = seg[1];
        let t = (x - x0) / (x1 - x0);
        for ch in 0..3 {
            entry[ch] = (c0[ch] + (c1[ch] - c0[ch]) * t).round() as u8;
        }
    }
    table
}

/// Color-map the heat map and alpha-blend it over the grayscale image
/// (replicated to RGB), returning interleaved RGB rows.
pub fn render_overlay(heatmap: &Heatmap, image: &GrayImage, alpha: f64) -> Result<Vec<u8>> {
    if heatmap.width != image.width || heatmap.height != image.height {
        return Err(Error::Shape {
            op: "render_overlay",
            detail: format!(
                "heatmap {}x{} vs image {}x{}",
                heatmap.width, heatmap.height, image.width, image.height
            ),
        });
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Usage(format!("alpha must be in [0,1], got {alpha}")));
    }
    let table = colormap();
    let gray = match image.to_bytes().pixels {
        Pixels::Byte(b) => b,
        Pixels::Real(_) => unreachable!("to_bytes returns byte form"),
    };
    let mut rgb = Vec::with_capacity(gray.len() * 3);
    for (&g, &h) in gray.iter().zip(&heatmap.values) {
        let idx = (h.clamp(0.0, 1.0) * 255.0).round() as usize;
        let color = table[idx];
        for ch in 0..3 {
            let blended = (1.0 - alpha) * g as f64 + alpha * color[ch] as f64;
            rgb.push(blended.round() as u8);
        }
    }
    Ok(rgb)
}

/// Render and write the overlay as a PPM file.
pub fn write_overlay(
    heatmap: &Heatmap,
    image: &GrayImage,
    alpha: f64,
    path: &Path,
) -> Result<()> {
    let rgb = render_overlay(heatmap, image, alpha)?;
    write_ppm(&rgb, image.width, image.height, path)
}

/// Dump a heat map as PGM (values scaled to 0..=255, rounding half up).
pub fn heatmap_to_image(heatmap: &Heatmap) -> GrayImage {
    GrayImage {
        width: heatmap.width,
        height: heatmap.height,
        pixels: Pixels::Byte(
            heatmap.values.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect(),
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_classifier, Family, Model, ModelConfig};

    fn toy_model(depth: usize, base: usize, size: usize, seed: u64) -> Model<f32> {
        let mut config = ModelConfig::new(Family::PlainCnn);
        config.depth = depth;
        config.base_channels = base;
        config.input_size = (size, size);
        config.dropout_rate = 0.0;
        build_classifier(&config, seed).unwrap()
    }

    fn test_image(size: usize, seed: u64) -> Tensor<f32> {
        let mut rng = SplitMix64::new(seed);
        let data: Vec<f32> = (0..size * size).map(|_| rng.uniform(-1.0, 2.0) as f32).collect();
        Tensor::from_vec(&[1, 1, size, size], data).unwrap()
    }

    #[test]
    fn heatmap_values_are_unit_interval_with_max_one() {
        let model = toy_model(2, 4, 16, 3);
        let image = test_image(16, 1);
        let map = score_cam(&model, &image, "block2", 1).unwrap();
        assert!(map.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
        if !map.is_zero() {
            let hi = map.values.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            assert_eq!(hi, 1.0);
        }
    }

    #[test]
    fn repeated_calls_are_bit_identical() {
        let model = toy_model(2, 4, 16, 5);
        let image = test_image(16, 2);
        let a = score_cam(&model, &image, "block2", 0).unwrap();
        let b = score_cam(&model, &image, "block2", 0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn all_constant_channels_are_an_empty_cam() {
        // Zero the first conv: every activation map is constant, so no
        // channel can be normalized and no CAM can be formed.
        let model = toy_model(1, 4, 8, 7);
        for (name, t) in model.parameters() {
            if name.starts_with("block1.") {
                t.copy_from(&vec![0.0; t.numel()]).unwrap();
            }
        }
        let image = test_image(8, 3);
        assert!(matches!(score_cam(&model, &image, "block1", 0), Err(Error::EmptyCam)));
    }

    #[test]
    fn bias_only_head_gives_uniform_weights() {
        // With head weights zeroed the target logit ignores the input, every
        // masked score ties, and the channel weighting collapses to 1/K: the
        // heat map must equal the normalized ReLU of the plain channel mean.
        let model = toy_model(1, 4, 8, 17);
        for (name, t) in model.parameters() {
            if name == "head.weight" {
                t.copy_from(&vec![0.0; t.numel()]).unwrap();
            }
        }
        let image = test_image(8, 5);
        let got = score_cam(&model, &image, "block1", 0).unwrap();

        let acts = capture_activations(&model, &image, "block1").unwrap();
        let (_, channels, ah, aw) = acts.shape().nchw("test").unwrap();
        let act = acts.values();
        let mut combined = vec![0.0f64; 64];
        for k in 0..channels {
            let plane: Vec<f64> =
                act[k * ah * aw..(k + 1) * ah * aw].iter().map(|&v| v as f64).collect();
            let up = upsample_channel(&plane, ah, aw, 8, 8);
            for (c, &v) in combined.iter_mut().zip(&up) {
                *c += v as f64 / channels as f64;
            }
        }
        for v in &mut combined {
            *v = v.max(0.0);
        }
        let hi = combined.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = combined.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(hi > 0.0);
        for (g, c) in got.values.iter().zip(&combined) {
            let want = (c - lo) / (hi - lo);
            assert!((*g as f64 - want).abs() < 1e-5, "{g} vs {want}");
        }
    }

    #[test]
    fn localization_of_uniform_map_is_mask_area_fraction() {
        let map = Heatmap {
            width: 10,
            height: 10,
            values: vec![1.0; 100],
            target_class: 0,
            source_layer: "x".into(),
        };
        let bits: Vec<bool> = (0..100).map(|i| i < 30).collect();
        let mask = BinaryMask::new(10, 10, bits).unwrap();
        let score = localization_score(&map, &mask).unwrap();
        assert!((score - 0.30).abs() < 1e-12);

        let all = BinaryMask::filled(10, 10, true);
        assert_eq!(localization_score(&map, &all).unwrap(), 1.0);
    }

    #[test]
    fn zero_heatmap_has_undefined_score() {
        let map = Heatmap {
            width: 2,
            height: 2,
            values: vec![0.0; 4],
            target_class: 0,
            source_layer: "x".into(),
        };
        let mask = BinaryMask::filled(2, 2, true);
        assert!(matches!(localization_score(&map, &mask), Err(Error::UndefinedScore)));
    }

    #[test]
    fn overlay_alpha_endpoints() {
        let map = Heatmap {
            width: 2,
            height: 1,
            values: vec![0.0, 1.0],
            target_class: 0,
            source_layer: "x".into(),
        };
        let image = GrayImage::from_bytes(2, 1, vec![100, 200]).unwrap();
        let table = colormap();

        let plain = render_overlay(&map, &image, 0.0).unwrap();
        assert_eq!(plain, vec![100, 100, 100, 200, 200, 200]);

        let pure = render_overlay(&map, &image, 1.0).unwrap();
        assert_eq!(&pure[0..3], &table[0]);
        assert_eq!(&pure[3..6], &table[255]);
    }

    #[test]
    fn weight_argmax_is_scale_invariant() {
        // softmax is monotone, so scaling all channel scores by a positive
        // constant reshapes the weights but never moves the argmax channel.
        let mut rng = SplitMix64::new(21);
        for _ in 0..50 {
            let scores: Vec<f64> = (0..6).map(|_| rng.uniform(0.0, 1.0)).collect();
            for scale in [0.5, 2.0, 10.0] {
                let softmax = |s: &[f64]| -> Vec<f64> {
                    let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = s.iter().map(|&v| (v - m).exp()).collect();
                    let z: f64 = e.iter().sum();
                    e.iter().map(|&v| v / z).collect()
                };
                let argmax = |v: &[f64]| {
                    v.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0
                };
                let plain = softmax(&scores);
                let scaled_scores: Vec<f64> = scores.iter().map(|&s| s * scale).collect();
                let scaled = softmax(&scaled_scores);
                assert_eq!(argmax(&plain), argmax(&scaled));
            }
        }
    }

    #[test]
    fn colormap_endpoints_are_blue_and_red() {
        let table = colormap();
        assert_eq!(table[0], [0, 0, 255]);
        assert_eq!(table[85], [0, 255, 255]);
        assert_eq!(table[170], [255, 255, 0]);
        assert_eq!(table[255], [255, 0, 0]);
    }

    /// Independent step-by-step reference on a 2-channel layer.
    #[test]
    fn matches_hand_rolled_reference_on_two_channel_model() {
        let model = toy_model(1, 2, 8, 11);
        let image = test_image(8, 4);
        let layer = "block1";
        let got = score_cam(&model, &image, layer, 1).unwrap();

        // reference implementation, written directly from the step list
        let acts = capture_activations(&model, &image, layer).unwrap();
        let (_, channels, ah, aw) = acts.shape().nchw("test").unwrap();
        assert_eq!(channels, 2);
        let act = acts.values();
        let mut ups = Vec::new();
        let mut scores = Vec::new();
        for k in 0..channels {
            let plane: Vec<f64> =
                act[k * ah * aw..(k + 1) * ah * aw].iter().map(|&v| v as f64).collect();
            let up = upsample_channel(&plane, ah, aw, 8, 8);
            let lo = up.iter().cloned().fold(f32::INFINITY, f32::min);
            let hi = up.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            assert!(hi > lo, "degenerate channel in test setup");
            let mask: Vec<f32> = up.iter().map(|&v| (v - lo) / (hi - lo)).collect();
            let masked: Vec<f32> =
                image.values().iter().zip(&mask).map(|(&p, &m)| p * m).collect();
            let inp = Tensor::from_vec(&[1, 1, 8, 8], masked).unwrap();
            let (probs, _) = crate::nn::predict_class(&model, &inp).unwrap();
            scores.push(probs[1]);
            ups.push(up);
        }
        let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|&s| (s - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        let weights: Vec<f64> = exps.iter().map(|&e| e / z).collect();
        assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-6);

        let mut combined = vec![0.0f64; 64];
        for k in 0..channels {
            for (c, &v) in combined.iter_mut().zip(&ups[k]) {
                *c += weights[k] * v as f64;
            }
        }
        for v in &mut combined {
            *v = v.max(0.0);
        }
        let hi = combined.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = combined.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(hi > 0.0);
        let want: Vec<f64> = combined.iter().map(|&v| (v - lo) / (hi - lo)).collect();

        for (g, w) in got.values.iter().zip(&want) {
            assert!((*g as f64 - w).abs() < 1e-5, "{g} vs {w}");
        }
    }

    #[test]
    fn single_channel_layer_is_normalized_relu_of_that_channel() {
        let model = toy_model(1, 1, 8, 13);
        let image = test_image(8, 9);
        let got = score_cam(&model, &image, "block1", 0).unwrap();

        let acts = capture_activations(&model, &image, "block1").unwrap();
        let (_, _, ah, aw) = acts.shape().nchw("test").unwrap();
        let plane: Vec<f64> = acts.values().iter().map(|&v| v as f64).collect();
        let up = upsample_channel(&plane, ah, aw, 8, 8);
        let relu: Vec<f64> = up.iter().map(|&v| (v as f64).max(0.0)).collect();
        let hi = relu.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = relu.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(hi > 0.0, "needs a positive activation for this test");
        for (g, r) in got.values.iter().zip(&relu) {
            let want = (r - lo) / (hi - lo);
            assert!((*g as f64 - want).abs() < 1e-5);
        }
    }
}
