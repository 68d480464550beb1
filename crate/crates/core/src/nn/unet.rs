//! U-Net topologies.
//!
//! Contracting path of `depth` steps (DoubleConv then 2x2 maxpool, channels
//! doubling from `base_channels`), a two-conv bottleneck, and an expanding
//! path of `depth` steps (2x2 up-convolution halving channels, skip fusion,
//! DoubleConv), closed by a 1x1 convolution and a sigmoid.
//!
//! The plain family fuses skips by channel concatenation. The modified
//! family fuses them with a bidirectional ConvLSTM and replaces the
//! bottleneck with a densely connected pair of DoubleConvs.

use crate::error::Result;
use crate::rng::SplitMix64;
use crate::tensor::ops::*;
use crate::tensor::{Scalar, Tensor};

use super::layers::{Conv2dLayer, ConvLstmFuse, DoubleConv, UpConv2dLayer};
use super::{Family, Forward, ModelConfig, Registry};

enum Bottleneck<S: Scalar> {
    Plain(DoubleConv<S>),
    /// Densely connected: the second pair consumes the channel-concat of the
    /// bottleneck input and the first pair's output.
    Dense {
        pair1: DoubleConv<S>,
        pair2: DoubleConv<S>,
    },
}

struct DecoderStep<S: Scalar> {
    up: UpConv2dLayer<S>,
    fuse: Option<ConvLstmFuse<S>>,
    convs: DoubleConv<S>,
}

pub(crate) struct UnetNet<S: Scalar> {
    encoder: Vec<DoubleConv<S>>,
    bottleneck: Bottleneck<S>,
    decoder: Vec<DecoderStep<S>>,
    final_conv: Conv2dLayer<S>,
    final_id: String,
}

impl<S: Scalar> UnetNet<S> {
    pub fn build(config: &ModelConfig, rng: &mut SplitMix64) -> (UnetNet<S>, Registry<S>) {
        let mut reg = Registry::new();
        let base = config.base_channels;
        let depth = config.depth;
        let modified = config.family == Family::ModifiedUnet;

        let mut encoder = Vec::with_capacity(depth);
        let mut cin = config.input_channels;
        for level in 0..depth {
            let cout = base << level;
            encoder.push(DoubleConv::new(&format!("enc{}", level + 1), cin, cout, rng, &mut reg));
            cin = cout;
        }

        let bottleneck_out = base << depth;
        let bottleneck = if modified {
            let pair1 = DoubleConv::new("bottleneck.pair1", cin, bottleneck_out, rng, &mut reg);
            let pair2 = DoubleConv::new(
                "bottleneck.pair2",
                cin + bottleneck_out,
                bottleneck_out,
                rng,
                &mut reg,
            );
            Bottleneck::Dense { pair1, pair2 }
        } else {
            Bottleneck::Plain(DoubleConv::new("bottleneck", cin, bottleneck_out, rng, &mut reg))
        };

        let mut decoder = Vec::with_capacity(depth);
        for level in (0..depth).rev() {
            let skip_ch = base << level;
            let name = level + 1;
            let up_id = format!("up{name}");
            let up = UpConv2dLayer::new(&up_id, skip_ch * 2, skip_ch, rng, &mut reg);
            reg.conv_id(&up_id);
            let fuse = modified
                .then(|| ConvLstmFuse::build(&format!("dec{name}.fuse"), skip_ch, rng, &mut reg));
            let conv_in = if modified { skip_ch } else { skip_ch * 2 };
            let convs = DoubleConv::new(&format!("dec{name}"), conv_in, skip_ch, rng, &mut reg);
            decoder.push(DecoderStep { up, fuse, convs });
        }

        let final_id = "final".to_string();
        let final_conv = Conv2dLayer::new(&final_id, base, 1, 1, 1, 0, rng, &mut reg);
        reg.conv_id(&final_id);

        (UnetNet { encoder, bottleneck, decoder, final_conv, final_id }, reg)
    }

    pub fn forward(
        &self,
        fw: &mut Forward<'_, S>,
        input: &Tensor<S>,
        dropout_rate: f64,
    ) -> Result<Tensor<S>> {
        let mut skips = Vec::with_capacity(self.encoder.len());
        let mut h = input.clone();
        for enc in &self.encoder {
            let features = enc.forward(fw, &h)?;
            h = maxpool2d(fw.tape, &features)?;
            skips.push(features);
        }

        h = match &self.bottleneck {
            Bottleneck::Plain(convs) => convs.forward(fw, &h)?,
            Bottleneck::Dense { pair1, pair2 } => {
                let first = pair1.forward(fw, &h)?;
                let cat = concat_channels(fw.tape, &h, &first)?;
                pair2.forward(fw, &cat)?
            }
        };
        h = dropout(fw.tape, &h, dropout_rate, fw.mode, fw.rng)?;

        for (step, skip) in self.decoder.iter().zip(skips.iter().rev()) {
            let upsampled = step.up.forward(fw, &h)?;
            let fused = match &step.fuse {
                Some(fuse) => fuse.forward(fw, skip, &upsampled)?,
                None => concat_channels(fw.tape, skip, &upsampled)?,
            };
            h = step.convs.forward(fw, &fused)?;
        }

        let logits = self.final_conv.forward(fw, &h)?;
        let probs = sigmoid(fw.tape, &logits)?;
        fw.note(&self.final_id, &probs);
        Ok(probs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_modified_unet, build_unet, Model};
    use crate::tensor::pointwise::Mode;
    use crate::tensor::Tape;

    fn seg_config(family: Family, depth: usize, base: usize, size: usize) -> ModelConfig {
        let mut config = ModelConfig::new(family);
        config.depth = depth;
        config.base_channels = base;
        config.input_size = (size, size);
        config
    }

    #[test]
    fn depth_four_unet_has_exactly_23_conv_layers() {
        let config = seg_config(Family::Unet, 4, 64, 256);
        let model: Model<f32> = build_unet(&config, 1).unwrap();
        assert_eq!(model.conv_layer_ids().len(), 23);
    }

    #[test]
    fn paper_scale_forward_maps_256_to_256_in_unit_interval() {
        let config = seg_config(Family::Unet, 4, 64, 256);
        let model: Model<f32> = build_unet(&config, 1).unwrap();
        let x = Tensor::zeros(&[1, 1, 256, 256]);
        let mut tape = Tape::disabled();
        let mut rng = SplitMix64::new(0);
        let mut fw = Forward::new(&mut tape, Mode::Eval, &mut rng);
        let y = model.forward(&mut fw, &x).unwrap();
        assert_eq!(y.shape().dims(), &[1, 1, 256, 256]);
        assert!(y.values().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn output_size_equals_input_size_across_configs() {
        for (depth, base, size) in [(1, 2, 8), (2, 4, 16), (3, 8, 24)] {
            let config = seg_config(Family::Unet, depth, base, size);
            let model: Model<f32> = build_unet(&config, 7).unwrap();
            let x = Tensor::zeros(&[2, 1, size, size]);
            let mut tape = Tape::disabled();
            let mut rng = SplitMix64::new(0);
            let mut fw = Forward::new(&mut tape, Mode::Eval, &mut rng);
            let y = model.forward(&mut fw, &x).unwrap();
            assert_eq!(y.shape().dims(), &[2, 1, size, size]);
        }
    }

    #[test]
    fn indivisible_input_size_is_a_config_error() {
        let config = seg_config(Family::Unet, 3, 4, 20); // 20 % 8 != 0
        assert!(matches!(
            build_unet::<f32>(&config, 0),
            Err(crate::error::Error::Config(_))
        ));
    }

    #[test]
    fn depth_one_base_two_parameter_count_matches_hand_sum() {
        let config = seg_config(Family::Unet, 1, 2, 8);
        let model: Model<f32> = build_unet(&config, 0).unwrap();
        // enc1: 1->2 (3x3): 18 + 2, 2->2: 36 + 2
        // bottleneck: 2->4: 72 + 4, 4->4: 144 + 4
        // up1: 4->2 (2x2): 32 + 2
        // dec1: 4->2: 72 + 2, 2->2: 36 + 2
        // final 1x1: 2->1: 2 + 1
        let want = 18 + 2 + 36 + 2 + 72 + 4 + 144 + 4 + 32 + 2 + 72 + 2 + 36 + 2 + 2 + 1;
        assert_eq!(model.parameter_count(), want);
    }

    #[test]
    fn modified_unet_forward_and_extra_parameters() {
        let plain = seg_config(Family::Unet, 1, 2, 8);
        let modified = seg_config(Family::ModifiedUnet, 1, 2, 8);
        let plain_model: Model<f32> = build_unet(&plain, 3).unwrap();
        let modified_model: Model<f32> = build_modified_unet(&modified, 3).unwrap();
        assert!(modified_model.parameter_count() > plain_model.parameter_count());

        let x = Tensor::filled(&[1, 1, 8, 8], 0.5f32);
        let mut tape = Tape::disabled();
        let mut rng = SplitMix64::new(0);
        let mut fw = Forward::new(&mut tape, Mode::Eval, &mut rng);
        let y = modified_model.forward(&mut fw, &x).unwrap();
        assert_eq!(y.shape().dims(), &[1, 1, 8, 8]);
        assert!(y.values().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}
