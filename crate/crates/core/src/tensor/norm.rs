//! Batch normalization over N,H,W per channel.

use crate::error::{Error, Result};

use super::pointwise::Mode;
use super::{Scalar, Tape, Tensor};

/// Running mean/variance buffers of one batch-norm layer. Updated in place
/// during training forwards, read in eval mode. Not trainable.
pub struct BatchNormState<S: Scalar> {
    pub running_mean: Tensor<S>,
    pub running_var: Tensor<S>,
    /// Fraction of the batch statistic blended into the running value each
    /// training step.
    pub momentum: f64,
}

impl<S: Scalar> BatchNormState<S> {
    pub fn new(channels: usize) -> BatchNormState<S> {
        BatchNormState {
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], S::one()),
            momentum: 0.1,
        }
    }
}

pub const BATCHNORM_DEFAULT_EPS: f64 = 1e-5;

/// Batch normalization. Train mode normalizes by batch statistics (population
/// variance) and updates the running buffers; eval mode normalizes by the
/// running buffers. Requires N*H*W >= 2 in train mode.
pub fn batchnorm2d<S: Scalar>(
    tape: &mut Tape<S>,
    input: &Tensor<S>,
    gamma: &Tensor<S>,
    beta: &Tensor<S>,
    state: &BatchNormState<S>,
    mode: Mode,
    epsilon: f64,
) -> Result<Tensor<S>> {
    let (n, c, h, w) = input.shape().nchw("batchnorm2d")?;
    if gamma.numel() != c || beta.numel() != c {
        return Err(Error::Shape {
            op: "batchnorm2d",
            detail: format!("gamma/beta must have {c} channels"),
        });
    }
    let hw = h * w;
    let m = n * hw;
    if mode == Mode::Train && m < 2 {
        return Err(Error::DegenerateBatch { elements: m });
    }

    let (mean, var) = match mode {
        Mode::Train => {
            let x = input.data();
            let mut mean = vec![0.0f64; c];
            let mut var = vec![0.0f64; c];
            for ch in 0..c {
                let mut acc = 0.0f64;
                for s in 0..n {
                    for v in &x[(s * c + ch) * hw..(s * c + ch + 1) * hw] {
                        acc += v.as_f64();
                    }
                }
                let mu = acc / m as f64;
                let mut vacc = 0.0f64;
                for s in 0..n {
                    for v in &x[(s * c + ch) * hw..(s * c + ch + 1) * hw] {
                        let d = v.as_f64() - mu;
                        vacc += d * d;
                    }
                }
                mean[ch] = mu;
                var[ch] = vacc / m as f64;
            }
            drop(x);
            // running <- (1 - momentum) * running + momentum * batch
            let mom = state.momentum;
            {
                let mut rm = state.running_mean.data_mut();
                let mut rv = state.running_var.data_mut();
                for ch in 0..c {
                    rm[ch] = S::from_f64((1.0 - mom) * rm[ch].as_f64() + mom * mean[ch]);
                    rv[ch] = S::from_f64((1.0 - mom) * rv[ch].as_f64() + mom * var[ch]);
                }
            }
            (mean, var)
        }
        Mode::Eval => {
            let rm = state.running_mean.data();
            let rv = state.running_var.data();
            (
                rm.iter().map(|v| v.as_f64()).collect(),
                rv.iter().map(|v| v.as_f64()).collect(),
            )
        }
    };

    let inv_std: Vec<S> = var
        .iter()
        .map(|&v| S::from_f64(1.0 / (v + epsilon).sqrt()))
        .collect();
    let mean_s: Vec<S> = mean.iter().map(|&v| S::from_f64(v)).collect();

    let mut out = vec![S::zero(); input.numel()];
    let mut xhat = vec![S::zero(); input.numel()];
    {
        let x = input.data();
        let gd = gamma.data();
        let bd = beta.data();
        for s in 0..n {
            for ch in 0..c {
                let base = (s * c + ch) * hw;
                let (mu, istd, ga, be) = (mean_s[ch], inv_std[ch], gd[ch], bd[ch]);
                for i in 0..hw {
                    let xh = (x[base + i] - mu) * istd;
                    xhat[base + i] = xh;
                    out[base + i] = ga * xh + be;
                }
            }
        }
    }

    let requires = input.requires_grad() || gamma.requires_grad() || beta.requires_grad();
    let result = Tensor::from_parts(input.shape(), out, requires);

    if tape.is_recording() && requires {
        let (x, ga, be, o) = (input.clone(), gamma.clone(), beta.clone(), result.clone());
        let train = mode == Mode::Train;
        tape.record("batchnorm2d", move || {
            let guard = o.grad_ref();
            let Some(g) = guard.as_ref() else { return Ok(()) };
            let gd = ga.data();

            let mut dgamma = vec![S::zero(); c];
            let mut dbeta = vec![S::zero(); c];
            for s in 0..n {
                for ch in 0..c {
                    let base = (s * c + ch) * hw;
                    let mut dg = S::zero();
                    let mut db = S::zero();
                    for i in 0..hw {
                        dg += g[base + i] * xhat[base + i];
                        db += g[base + i];
                    }
                    dgamma[ch] += dg;
                    dbeta[ch] += db;
                }
            }

            if x.requires_grad() {
                let mut dx = vec![S::zero(); x.numel()];
                if train {
                    // dx = (gamma * inv_std) * (g - mean(g) - xhat * mean(g*xhat))
                    let minv = S::from_f64(1.0 / m as f64);
                    for ch in 0..c {
                        let g_mean = dbeta[ch] * minv;
                        let gx_mean = dgamma[ch] * minv;
                        let scale = gd[ch] * inv_std[ch];
                        for s in 0..n {
                            let base = (s * c + ch) * hw;
                            for i in 0..hw {
                                dx[base + i] =
                                    scale * (g[base + i] - g_mean - xhat[base + i] * gx_mean);
                            }
                        }
                    }
                } else {
                    for ch in 0..c {
                        let scale = gd[ch] * inv_std[ch];
                        for s in 0..n {
                            let base = (s * c + ch) * hw;
                            for i in 0..hw {
                                dx[base + i] = scale * g[base + i];
                            }
                        }
                    }
                }
                x.accumulate_grad(&dx);
            }
            drop(gd);
            if ga.requires_grad() {
                ga.accumulate_grad(&dgamma);
            }
            if be.requires_grad() {
                be.accumulate_grad(&dbeta);
            }
            Ok(())
        });
    }
    Ok(result)
}
