//! Network topologies and training.
//!
//! Five model families share one [`Model`] wrapper: two segmentation U-Nets
//! (plain concatenation skips vs BConvLSTM-fused skips with a densely
//! connected bottleneck) and three small classifier families (plain stacked
//! conv, residual blocks, dense connectivity).

mod classifier;
mod layers;
mod train;
mod unet;

pub use layers::{bconvlstm_fuse, ConvLstmFuse};
pub use train::{
    capture_activations, fit, predict_class, predict_mask, EarlyStopper, EpochStats,
    TrainHistory, TrainSchedule,
};

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{load_checkpoint, save_checkpoint};
use crate::rng::SplitMix64;
use crate::tensor::pointwise::Mode;
use crate::tensor::{Scalar, Tape, Tensor};

use classifier::ClassifierNet;
use unet::UnetNet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Segmentation,
    Classification,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Segmentation => "segmentation",
            Task::Classification => "classification",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Unet,
    ModifiedUnet,
    PlainCnn,
    ResnetMini,
    DensenetMini,
}

impl Family {
    pub fn task(self) -> Task {
        match self {
            Family::Unet | Family::ModifiedUnet => Task::Segmentation,
            _ => Task::Classification,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Unet => "unet",
            Family::ModifiedUnet => "modified_unet",
            Family::PlainCnn => "plain_cnn",
            Family::ResnetMini => "resnet_mini",
            Family::DensenetMini => "densenet_mini",
        }
    }

    pub fn parse(s: &str) -> Result<Family> {
        match s {
            "unet" => Ok(Family::Unet),
            "modified_unet" => Ok(Family::ModifiedUnet),
            "plain_cnn" => Ok(Family::PlainCnn),
            "resnet_mini" => Ok(Family::ResnetMini),
            "densenet_mini" => Ok(Family::DensenetMini),
            other => Err(Error::Config(format!(
                "unknown model family {other:?}; expected one of unet, modified_unet, \
                 plain_cnn, resnet_mini, densenet_mini"
            ))),
        }
    }
}

/// Topology hyperparameters of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub task: Task,
    pub family: Family,
    /// (height, width) of the input plane.
    pub input_size: (usize, usize),
    pub input_channels: usize,
    pub base_channels: usize,
    /// Number of downsampling steps.
    pub depth: usize,
    pub num_classes: usize,
    pub dropout_rate: f64,
}

impl ModelConfig {
    pub fn new(family: Family) -> ModelConfig {
        ModelConfig {
            task: family.task(),
            family,
            input_size: (64, 64),
            input_channels: 1,
            base_channels: 16,
            depth: 4,
            num_classes: 2,
            dropout_rate: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.task != self.family.task() {
            return Err(Error::Config(format!(
                "family {} implies task {}, config says {}",
                self.family.name(),
                self.family.task().name(),
                self.task.name()
            )));
        }
        if self.depth < 1 || self.base_channels < 1 || self.input_channels < 1 {
            return Err(Error::Config(
                "depth, base_channels and input_channels must be at least 1".into(),
            ));
        }
        let div = 1usize << self.depth;
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || h % div != 0 || w % div != 0 {
            return Err(Error::Config(format!(
                "input size {h}x{w} must be divisible by 2^depth = {div}"
            )));
        }
        if self.task == Task::Classification && self.num_classes < 2 {
            return Err(Error::Config("classification needs at least 2 classes".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate must be in [0,1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

/// Everything a forward pass needs besides the input.
pub struct Forward<'a, S: Scalar> {
    pub tape: &'a mut Tape<S>,
    pub mode: Mode,
    pub rng: &'a mut SplitMix64,
    capture_id: Option<&'a str>,
    captured: Option<Tensor<S>>,
}

impl<'a, S: Scalar> Forward<'a, S> {
    pub fn new(tape: &'a mut Tape<S>, mode: Mode, rng: &'a mut SplitMix64) -> Forward<'a, S> {
        Forward { tape, mode, rng, capture_id: None, captured: None }
    }

    pub fn with_capture(
        tape: &'a mut Tape<S>,
        mode: Mode,
        rng: &'a mut SplitMix64,
        layer_id: &'a str,
    ) -> Forward<'a, S> {
        Forward { tape, mode, rng, capture_id: Some(layer_id), captured: None }
    }

    /// Called by layers at each capture point.
    pub(crate) fn note(&mut self, id: &str, tensor: &Tensor<S>) {
        if self.capture_id == Some(id) && self.captured.is_none() {
            self.captured = Some(tensor.clone());
        }
    }

    pub fn take_captured(&mut self) -> Option<Tensor<S>> {
        self.captured.take()
    }
}

enum Net<S: Scalar> {
    Unet(UnetNet<S>),
    Classifier(ClassifierNet<S>),
}

/// A built network: ordered layers, named parameters, capturable layer ids.
pub struct Model<S: Scalar> {
    config: ModelConfig,
    net: Net<S>,
    params: Vec<(String, Tensor<S>)>,
    state: Vec<(String, Tensor<S>)>,
    conv_ids: Vec<String>,
}

impl<S: Scalar> Model<S> {
    /// Build and He-initialize a model from its config; weights are drawn
    /// from a stream derived from `seed`.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Model<S>> {
        config.validate()?;
        let mut rng = SplitMix64::derive(seed, 0x1217);
        let (net, reg) = match config.family {
            Family::Unet | Family::ModifiedUnet => {
                let (net, reg) = UnetNet::build(config, &mut rng);
                (Net::Unet(net), reg)
            }
            _ => {
                let (net, reg) = ClassifierNet::build(config, &mut rng);
                (Net::Classifier(net), reg)
            }
        };
        Ok(Model {
            config: config.clone(),
            net,
            params: reg.params,
            state: reg.state,
            conv_ids: reg.conv_ids,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Output: sigmoid probability map N,1,H,W for segmentation; class
    /// logits N,K for classification.
    pub fn forward(&self, fw: &mut Forward<'_, S>, input: &Tensor<S>) -> Result<Tensor<S>> {
        let (n, c, h, w) = input.shape().nchw("model forward")?;
        let _ = n;
        if c != self.config.input_channels || (h, w) != self.config.input_size {
            return Err(Error::Shape {
                op: "model forward",
                detail: format!(
                    "expected N,{},{},{} input, got {}",
                    self.config.input_channels,
                    self.config.input_size.0,
                    self.config.input_size.1,
                    input.shape()
                ),
            });
        }
        match &self.net {
            Net::Unet(net) => net.forward(fw, input, self.config.dropout_rate),
            Net::Classifier(net) => net.forward(fw, input, self.config.dropout_rate),
        }
    }

    /// Trainable parameters in build order.
    pub fn parameters(&self) -> &[(String, Tensor<S>)] {
        &self.params
    }

    /// Parameters plus non-trainable buffers (batch-norm running stats);
    /// this is what checkpoints carry.
    pub fn state_tensors(&self) -> &[(String, Tensor<S>)] {
        &self.state
    }

    /// Ids accepted by capture/CAM, in forward order.
    pub fn conv_layer_ids(&self) -> &[String] {
        &self.conv_ids
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Snapshot all state values (for best-epoch checkpointing).
    pub fn snapshot(&self) -> Vec<Vec<S>> {
        self.state.iter().map(|(_, t)| t.values()).collect()
    }

    pub fn restore(&self, snapshot: &[Vec<S>]) -> Result<()> {
        if snapshot.len() != self.state.len() {
            return Err(Error::Usage("snapshot/state length mismatch".into()));
        }
        for ((_, t), values) in self.state.iter().zip(snapshot) {
            t.copy_from(values)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(&self.state, path)
    }

    pub fn load(&self, path: &Path) -> Result<()> {
        load_checkpoint(path, &self.state)
    }
}

/// Registry filled during model construction.
pub(crate) struct Registry<S: Scalar> {
    pub params: Vec<(String, Tensor<S>)>,
    pub state: Vec<(String, Tensor<S>)>,
    pub conv_ids: Vec<String>,
}

impl<S: Scalar> Registry<S> {
    pub fn new() -> Registry<S> {
        Registry { params: Vec::new(), state: Vec::new(), conv_ids: Vec::new() }
    }

    pub fn param(&mut self, name: String, tensor: &Tensor<S>) {
        self.params.push((name.clone(), tensor.clone()));
        self.state.push((name, tensor.clone()));
    }

    pub fn buffer(&mut self, name: String, tensor: &Tensor<S>) {
        self.state.push((name, tensor.clone()));
    }

    pub fn conv_id(&mut self, id: &str) {
        self.conv_ids.push(id.to_string());
    }
}

/// Build the original U-Net.
pub fn build_unet<S: Scalar>(config: &ModelConfig, seed: u64) -> Result<Model<S>> {
    if config.family != Family::Unet {
        return Err(Error::Config(format!(
            "build_unet expects family unet, got {}",
            config.family.name()
        )));
    }
    Model::build(config, seed)
}

/// Build the modified U-Net (BConvLSTM skip fusion, dense bottleneck).
pub fn build_modified_unet<S: Scalar>(config: &ModelConfig, seed: u64) -> Result<Model<S>> {
    if config.family != Family::ModifiedUnet {
        return Err(Error::Config(format!(
            "build_modified_unet expects family modified_unet, got {}",
            config.family.name()
        )));
    }
    Model::build(config, seed)
}

/// Build one of the classifier families.
pub fn build_classifier<S: Scalar>(config: &ModelConfig, seed: u64) -> Result<Model<S>> {
    if config.family.task() != Task::Classification {
        return Err(Error::Config(format!(
            "build_classifier expects a classifier family, got {}",
            config.family.name()
        )));
    }
    Model::build(config, seed)
}
