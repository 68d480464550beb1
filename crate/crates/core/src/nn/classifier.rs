//! Desk-scale classifier families.
//!
//! All three end with global average pooling, dropout and a dense layer;
//! [`Model::forward`](super::Model::forward) returns the class logits.

use crate::error::Result;
use crate::rng::SplitMix64;
use crate::tensor::ops::*;
use crate::tensor::{Scalar, Tensor};

use super::layers::{BatchNormLayer, Conv2dLayer, DenseLayer};
use super::{Family, Forward, ModelConfig, Registry};

struct ConvBn<S: Scalar> {
    conv: Conv2dLayer<S>,
    bn: BatchNormLayer<S>,
}

impl<S: Scalar> ConvBn<S> {
    fn new(
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        rng: &mut SplitMix64,
        reg: &mut Registry<S>,
    ) -> ConvBn<S> {
        ConvBn {
            conv: Conv2dLayer::new(name, cin, cout, k, 1, if k == 3 { 1 } else { 0 }, rng, reg),
            bn: BatchNormLayer::new(&format!("{name}.bn"), cout, reg),
        }
    }

    fn forward(&self, fw: &mut Forward<'_, S>, x: &Tensor<S>) -> Result<Tensor<S>> {
        let h = self.conv.forward(fw, x)?;
        self.bn.forward(fw, &h)
    }
}

enum Block<S: Scalar> {
    /// conv3x3 -> bn -> relu -> maxpool
    Plain { id: String, layer: ConvBn<S> },
    /// Two-conv residual unit with identity or 1x1-projection shortcut,
    /// then maxpool.
    Residual {
        id: String,
        c1: ConvBn<S>,
        c2: ConvBn<S>,
        shortcut: Option<ConvBn<S>>,
    },
    /// Dense stage: every layer consumes the concat of the stage input and
    /// all previous layer outputs, then a 1x1 transition compresses and a
    /// maxpool downsamples.
    DenseStage {
        id: String,
        layers: Vec<ConvBn<S>>,
        transition: ConvBn<S>,
    },
}

impl<S: Scalar> Block<S> {
    fn forward(&self, fw: &mut Forward<'_, S>, x: &Tensor<S>) -> Result<Tensor<S>> {
        match self {
            Block::Plain { id, layer } => {
                let h = layer.forward(fw, x)?;
                let h = relu(fw.tape, &h)?;
                let h = maxpool2d(fw.tape, &h)?;
                fw.note(id, &h);
                Ok(h)
            }
            Block::Residual { id, c1, c2, shortcut } => {
                let h = c1.forward(fw, x)?;
                let h = relu(fw.tape, &h)?;
                let branch = c2.forward(fw, &h)?;
                let short = match shortcut {
                    Some(proj) => proj.forward(fw, x)?,
                    None => x.clone(),
                };
                let summed = add(fw.tape, &branch, &short)?;
                let joined = relu(fw.tape, &summed)?;
                let out = maxpool2d(fw.tape, &joined)?;
                fw.note(id, &out);
                Ok(out)
            }
            Block::DenseStage { id, layers, transition } => {
                let mut features = x.clone();
                for layer in layers {
                    let pre = layer.forward(fw, &features)?;
                    let new = relu(fw.tape, &pre)?;
                    features = concat_channels(fw.tape, &features, &new)?;
                }
                let pre = transition.forward(fw, &features)?;
                let compressed = relu(fw.tape, &pre)?;
                let out = maxpool2d(fw.tape, &compressed)?;
                fw.note(id, &out);
                Ok(out)
            }
        }
    }
}

pub(crate) struct ClassifierNet<S: Scalar> {
    stem: Option<(String, ConvBn<S>)>,
    blocks: Vec<Block<S>>,
    head: DenseLayer<S>,
}

/// Dense-family growth rate equals `base_channels`; stages run two dense
/// layers before the transition.
const DENSE_LAYERS_PER_STAGE: usize = 2;

impl<S: Scalar> ClassifierNet<S> {
    pub fn build(config: &ModelConfig, rng: &mut SplitMix64) -> (ClassifierNet<S>, Registry<S>) {
        let mut reg = Registry::new();
        let base = config.base_channels;
        let depth = config.depth;

        let mut stem = None;
        let mut blocks = Vec::with_capacity(depth);
        let mut channels = config.input_channels;

        match config.family {
            Family::PlainCnn => {
                for level in 0..depth {
                    let id = format!("block{}", level + 1);
                    let cout = base << level;
                    let layer = ConvBn::new(&id, channels, cout, 3, rng, &mut reg);
                    reg.conv_id(&id);
                    blocks.push(Block::Plain { id, layer });
                    channels = cout;
                }
            }
            Family::ResnetMini => {
                for level in 0..depth {
                    let id = format!("block{}", level + 1);
                    let cout = base << level;
                    let c1 = ConvBn::new(&format!("{id}.conv1"), channels, cout, 3, rng, &mut reg);
                    let c2 = ConvBn::new(&format!("{id}.conv2"), cout, cout, 3, rng, &mut reg);
                    let shortcut = (channels != cout)
                        .then(|| ConvBn::new(&format!("{id}.proj"), channels, cout, 1, rng, &mut reg));
                    reg.conv_id(&id);
                    blocks.push(Block::Residual { id, c1, c2, shortcut });
                    channels = cout;
                }
            }
            Family::DensenetMini => {
                let stem_id = "stem".to_string();
                let stem_layer = ConvBn::new(&stem_id, channels, base, 3, rng, &mut reg);
                reg.conv_id(&stem_id);
                channels = base;
                stem = Some((stem_id, stem_layer));
                for level in 0..depth {
                    let id = format!("stage{}", level + 1);
                    let mut layers = Vec::with_capacity(DENSE_LAYERS_PER_STAGE);
                    let mut c = channels;
                    for l in 0..DENSE_LAYERS_PER_STAGE {
                        layers.push(ConvBn::new(
                            &format!("{id}.dense{}", l + 1),
                            c,
                            base,
                            3,
                            rng,
                            &mut reg,
                        ));
                        c += base;
                    }
                    let compressed = (c / 2).max(1);
                    let transition =
                        ConvBn::new(&format!("{id}.trans"), c, compressed, 1, rng, &mut reg);
                    reg.conv_id(&id);
                    blocks.push(Block::DenseStage { id, layers, transition });
                    channels = compressed;
                }
            }
            _ => unreachable!("segmentation families build UnetNet"),
        }

        let head = DenseLayer::new("head", channels, config.num_classes, rng, &mut reg);
        (ClassifierNet { stem, blocks, head }, reg)
    }

    pub fn forward(
        &self,
        fw: &mut Forward<'_, S>,
        input: &Tensor<S>,
        dropout_rate: f64,
    ) -> Result<Tensor<S>> {
        let mut h = input.clone();
        if let Some((id, stem)) = &self.stem {
            let pre = stem.forward(fw, &h)?;
            h = relu(fw.tape, &pre)?;
            fw.note(id, &h);
        }
        for block in &self.blocks {
            h = block.forward(fw, &h)?;
        }
        let pooled = global_avg_pool(fw.tape, &h)?;
        let dropped = dropout(fw.tape, &pooled, dropout_rate, fw.mode, fw.rng)?;
        self.head.forward(fw, &dropped)
    }
}
