//! Parameterized layers shared by the model families.

use crate::error::Result;
use crate::rng::SplitMix64;
use crate::tensor::norm::{batchnorm2d, BatchNormState, BATCHNORM_DEFAULT_EPS};
use crate::tensor::ops::*;
use crate::tensor::{Scalar, Tensor};

use super::{Forward, Registry};

/// He-uniform fan-in initialization: uniform(-sqrt(6/fan_in), +sqrt(6/fan_in)).
fn he_uniform<S: Scalar>(dims: &[usize], fan_in: usize, rng: &mut SplitMix64) -> Tensor<S> {
    let limit = (6.0 / fan_in as f64).sqrt();
    let n: usize = dims.iter().product();
    let data: Vec<S> = (0..n).map(|_| S::from_f64(rng.uniform(-limit, limit))).collect();
    Tensor::from_vec(dims, data).expect("init shape") // finite by construction
}

pub(crate) struct Conv2dLayer<S: Scalar> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
    pub stride: usize,
    pub padding: usize,
}

impl<S: Scalar> Conv2dLayer<S> {
    pub fn new(
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        padding: usize,
        rng: &mut SplitMix64,
        reg: &mut Registry<S>,
    ) -> Conv2dLayer<S> {
        let weight = he_uniform(&[cout, cin, k, k], cin * k * k, rng).requiring_grad();
        let bias = Tensor::zeros(&[cout]).requiring_grad();
        reg.param(format!("{name}.weight"), &weight);
        reg.param(format!("{name}.bias"), &bias);
        Conv2dLayer { weight, bias, stride, padding }
    }

    /// Convolution with a fixed zero bias that is neither trained nor stored.
    pub fn new_no_bias(
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        padding: usize,
        rng: &mut SplitMix64,
        reg: &mut Registry<S>,
    ) -> Conv2dLayer<S> {
        let weight = he_uniform(&[cout, cin, k, k], cin * k * k, rng).requiring_grad();
        let bias = Tensor::zeros(&[cout]);
        reg.param(format!("{name}.weight"), &weight);
        Conv2dLayer { weight, bias, stride, padding }
    }

    pub fn forward(&self, fw: &mut Forward<'_, S>, x: &Tensor<S>) -> Result<Tensor<S>> {
        conv2d(fw.tape, x, &self.weight, &self.bias, self.stride, self.padding)
    }
}

pub(crate) struct UpConv2dLayer<S: Scalar> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

impl<S: Scalar> UpConv2dLayer<S> {
    pub fn new(
        name: &str,
        cin: usize,
        cout: usize,
        rng: &mut SplitMix64,
        reg: &mut Registry<S>,
    ) -> UpConv2dLayer<S> {
        let weight = he_uniform(&[cin, cout, 2, 2], cin * 4, rng).requiring_grad();
        let bias = Tensor::zeros(&[cout]).requiring_grad();
        reg.param(format!("{name}.weight"), &weight);
        reg.param(format!("{name}.bias"), &bias);
        UpConv2dLayer { weight, bias }
    }

    pub fn forward(&self, fw: &mut Forward<'_, S>, x: &Tensor<S>) -> Result<Tensor<S>> {
        up_conv2d(fw.tape, x, &self.weight, &self.bias)
    }
}

pub(crate) struct BatchNormLayer<S: Scalar> {
    pub gamma: Tensor<S>,
    pub beta: Tensor<S>,
    pub state: BatchNormState<S>,
}

impl<S: Scalar> BatchNormLayer<S> {
    pub fn new(name: &str, channels: usize, reg: &mut Registry<S>) -> BatchNormLayer<S> {
        let gamma = Tensor::filled(&[channels], S::one()).requiring_grad();
        let beta = Tensor::zeros(&[channels]).requiring_grad();
        let state = BatchNormState::new(channels);
        reg.param(format!("{name}.gamma"), &gamma);
        reg.param(format!("{name}.beta"), &beta);
        reg.buffer(format!("{name}.running_mean"), &state.running_mean);
        reg.buffer(format!("{name}.running_var"), &state.running_var);
        BatchNormLayer { gamma, beta, state }
    }

    pub fn forward(&self, fw: &mut Forward<'_, S>, x: &Tensor<S>) -> Result<Tensor<S>> {
        batchnorm2d(fw.tape, x, &self.gamma, &self.beta, &self.state, fw.mode, BATCHNORM_DEFAULT_EPS)
    }
}

pub(crate) struct DenseLayer<S: Scalar> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

impl<S: Scalar> DenseLayer<S> {
    pub fn new(
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut SplitMix64,
        reg: &mut Registry<S>,
    ) -> DenseLayer<S> {
        let weight = he_uniform(&[fan_in, fan_out], fan_in, rng).requiring_grad();
        let bias = Tensor::zeros(&[fan_out]).requiring_grad();
        reg.param(format!("{name}.weight"), &weight);
        reg.param(format!("{name}.bias"), &bias);
        DenseLayer { weight, bias }
    }

    pub fn forward(&self, fw: &mut Forward<'_, S>, x: &Tensor<S>) -> Result<Tensor<S>> {
        dense(fw.tape, x, &self.weight, &self.bias)
    }
}

/// Two 3x3 same-padding convolutions, each followed by ReLU.
pub(crate) struct DoubleConv<S: Scalar> {
    id1: String,
    id2: String,
    a: Conv2dLayer<S>,
    b: Conv2dLayer<S>,
}

impl<S: Scalar> DoubleConv<S> {
    pub fn new(
        prefix: &str,
        cin: usize,
        cout: usize,
        rng: &mut SplitMix64,
        reg: &mut Registry<S>,
    ) -> DoubleConv<S> {
        let id1 = format!("{prefix}.conv1");
        let id2 = format!("{prefix}.conv2");
        let a = Conv2dLayer::new(&id1, cin, cout, 3, 1, 1, rng, reg);
        let b = Conv2dLayer::new(&id2, cout, cout, 3, 1, 1, rng, reg);
        reg.conv_id(&id1);
        reg.conv_id(&id2);
        DoubleConv { id1, id2, a, b }
    }

    pub fn forward(&self, fw: &mut Forward<'_, S>, x: &Tensor<S>) -> Result<Tensor<S>> {
        let h = self.a.forward(fw, x)?;
        let h = relu(fw.tape, &h)?;
        fw.note(&self.id1, &h);
        let h = self.b.forward(fw, &h)?;
        let h = relu(fw.tape, &h)?;
        fw.note(&self.id2, &h);
        Ok(h)
    }
}

/// One ConvLSTM cell: gate pre-activations are the sum of 3x3 convolutions
/// over the step input and the previous hidden state, in i,f,g,o channel
/// order. The bias lives on the input path only, so the step from the zero
/// initial hidden state skips the hidden convolution entirely.
pub(crate) struct ConvLstmCell<S: Scalar> {
    wx: Conv2dLayer<S>,
    wh: Conv2dLayer<S>,
    channels: usize,
}

impl<S: Scalar> ConvLstmCell<S> {
    pub fn new(
        prefix: &str,
        channels: usize,
        rng: &mut SplitMix64,
        reg: &mut Registry<S>,
    ) -> ConvLstmCell<S> {
        let wx = Conv2dLayer::new(&format!("{prefix}.wx"), channels, 4 * channels, 3, 1, 1, rng, reg);
        let wh =
            Conv2dLayer::new_no_bias(&format!("{prefix}.wh"), channels, 4 * channels, 3, 1, 1, rng, reg);
        ConvLstmCell { wx, wh, channels }
    }

    /// One step: returns (h', c'). `h`/`c` of None mean the zero initial
    /// state.
    fn step(
        &self,
        fw: &mut Forward<'_, S>,
        x: &Tensor<S>,
        state: Option<(&Tensor<S>, &Tensor<S>)>,
    ) -> Result<(Tensor<S>, Tensor<S>)> {
        let gates_x = self.wx.forward(fw, x)?;
        let gates = match state {
            Some((h, _)) => {
                let gates_h = self.wh.forward(fw, h)?;
                add(fw.tape, &gates_x, &gates_h)?
            }
            None => gates_x,
        };
        let cdim = self.channels;
        let i_pre = slice_channels(fw.tape, &gates, 0, cdim)?;
        let i = sigmoid(fw.tape, &i_pre)?;
        let f_pre = slice_channels(fw.tape, &gates, cdim, 2 * cdim)?;
        let f = sigmoid(fw.tape, &f_pre)?;
        let g_pre = slice_channels(fw.tape, &gates, 2 * cdim, 3 * cdim)?;
        let g = tanh(fw.tape, &g_pre)?;
        let o_pre = slice_channels(fw.tape, &gates, 3 * cdim, 4 * cdim)?;
        let o = sigmoid(fw.tape, &o_pre)?;
        let written = mul(fw.tape, &i, &g)?;
        let c_next = match state {
            Some((_, c)) => {
                let retained = mul(fw.tape, &f, c)?;
                add(fw.tape, &retained, &written)?
            }
            None => written, // f * c0 vanishes: c0 = 0
        };
        let c_act = tanh(fw.tape, &c_next)?;
        let h_next = mul(fw.tape, &o, &c_act)?;
        Ok((h_next, c_next))
    }

    /// Run the 2-step sequence (first, second) from zero states and return
    /// the final hidden state.
    fn run_pair(
        &self,
        fw: &mut Forward<'_, S>,
        first: &Tensor<S>,
        second: &Tensor<S>,
    ) -> Result<Tensor<S>> {
        let (h1, c1) = self.step(fw, first, None)?;
        let (h2, _c2) = self.step(fw, second, Some((&h1, &c1)))?;
        Ok(h2)
    }
}

/// Bidirectional ConvLSTM skip fusion: a forward cell over (skip, up), a
/// backward cell over (up, skip), and a 1x1 projection of the concatenated
/// final hidden states through tanh.
pub struct ConvLstmFuse<S: Scalar> {
    fwd: ConvLstmCell<S>,
    bwd: ConvLstmCell<S>,
    proj: Conv2dLayer<S>,
}

impl<S: Scalar> ConvLstmFuse<S> {
    pub(crate) fn build(
        prefix: &str,
        channels: usize,
        rng: &mut SplitMix64,
        reg: &mut Registry<S>,
    ) -> ConvLstmFuse<S> {
        let fwd = ConvLstmCell::new(&format!("{prefix}.fwd"), channels, rng, reg);
        let bwd = ConvLstmCell::new(&format!("{prefix}.bwd"), channels, rng, reg);
        let proj = Conv2dLayer::new(&format!("{prefix}.proj"), 2 * channels, channels, 1, 1, 0, rng, reg);
        ConvLstmFuse { fwd, bwd, proj }
    }

    /// Standalone constructor (tests, gradient checks).
    pub fn new(channels: usize, seed: u64) -> (ConvLstmFuse<S>, Vec<(String, Tensor<S>)>) {
        let mut reg = Registry::new();
        let mut rng = SplitMix64::derive(seed, 0x10f);
        let layer = ConvLstmFuse::build("fuse", channels, &mut rng, &mut reg);
        (layer, reg.params)
    }

    pub fn forward(
        &self,
        fw: &mut Forward<'_, S>,
        skip: &Tensor<S>,
        up: &Tensor<S>,
    ) -> Result<Tensor<S>> {
        crate::tensor::check_same_shape("bconvlstm_fuse", skip, up)?;
        let h_fwd = self.fwd.run_pair(fw, skip, up)?;
        let h_bwd = self.bwd.run_pair(fw, up, skip)?;
        let cat = concat_channels(fw.tape, &h_fwd, &h_bwd)?;
        let projected = self.proj.forward(fw, &cat)?;
        tanh(fw.tape, &projected)
    }
}

/// Fuse a skip/decoder pair through a bidirectional ConvLSTM.
pub fn bconvlstm_fuse<S: Scalar>(
    fw: &mut Forward<'_, S>,
    skip: &Tensor<S>,
    up: &Tensor<S>,
    params: &ConvLstmFuse<S>,
) -> Result<Tensor<S>> {
    params.forward(fw, skip, up)
}
