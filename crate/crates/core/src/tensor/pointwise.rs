//! Elementwise operations: activations, add, mul, dropout.

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

use super::{check_same_shape, Scalar, Tape, Tensor};

/// Activation kinds supported by [`activation`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    /// Softmax over the channel axis (axis 1), per sample and, for rank-4
    /// inputs, per spatial position.
    SoftmaxChannels,
}

/// Train/eval switch for stateful ops (dropout, batch norm).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub fn activation<S: Scalar>(
    tape: &mut Tape<S>,
    input: &Tensor<S>,
    kind: Activation,
) -> Result<Tensor<S>> {
    match kind {
        Activation::Relu => relu(tape, input),
        Activation::Sigmoid => sigmoid(tape, input),
        Activation::Tanh => tanh(tape, input),
        Activation::SoftmaxChannels => softmax_channels(tape, input),
    }
}

pub fn relu<S: Scalar>(tape: &mut Tape<S>, input: &Tensor<S>) -> Result<Tensor<S>> {
    let out: Vec<S> = input.data().iter().map(|&v| v.max(S::zero())).collect();
    let result = Tensor::from_parts(input.shape(), out, input.requires_grad());
    if tape.is_recording() && input.requires_grad() {
        let (x, o) = (input.clone(), result.clone());
        tape.record("relu", move || {
            let guard = o.grad_ref();
            let Some(g) = guard.as_ref() else { return Ok(()) };
            let xd = x.data();
            let dx: Vec<S> = xd
                .iter()
                .zip(g)
                .map(|(&v, &gv)| if v > S::zero() { gv } else { S::zero() })
                .collect();
            drop(xd);
            x.accumulate_grad(&dx);
            Ok(())
        });
    }
    Ok(result)
}

pub fn sigmoid<S: Scalar>(tape: &mut Tape<S>, input: &Tensor<S>) -> Result<Tensor<S>> {
    let out: Vec<S> = input
        .data()
        .iter()
        .map(|&v| S::one() / (S::one() + (-v).exp()))
        .collect();
    let result = Tensor::from_parts(input.shape(), out, input.requires_grad());
    if tape.is_recording() && input.requires_grad() {
        let (x, o) = (input.clone(), result.clone());
        tape.record("sigmoid", move || {
            let guard = o.grad_ref();
            let Some(g) = guard.as_ref() else { return Ok(()) };
            let od = o.data();
            let dx: Vec<S> = od
                .iter()
                .zip(g)
                .map(|(&y, &gv)| gv * y * (S::one() - y))
                .collect();
            drop(od);
            x.accumulate_grad(&dx);
            Ok(())
        });
    }
    Ok(result)
}

pub fn tanh<S: Scalar>(tape: &mut Tape<S>, input: &Tensor<S>) -> Result<Tensor<S>> {
    let out: Vec<S> = input.data().iter().map(|&v| v.tanh()).collect();
    let result = Tensor::from_parts(input.shape(), out, input.requires_grad());
    if tape.is_recording() && input.requires_grad() {
        let (x, o) = (input.clone(), result.clone());
        tape.record("tanh", move || {
            let guard = o.grad_ref();
            let Some(g) = guard.as_ref() else { return Ok(()) };
            let od = o.data();
            let dx: Vec<S> = od
                .iter()
                .zip(g)
                .map(|(&y, &gv)| gv * (S::one() - y * y))
                .collect();
            drop(od);
            x.accumulate_grad(&dx);
            Ok(())
        });
    }
    Ok(result)
}

/// Iterate the (group base offset, stride, count) triples over which channel
/// softmax is taken: rank-2 rows, or per (n, h, w) column for rank 4.
fn channel_groups<S: Scalar>(t: &Tensor<S>) -> Result<(Vec<usize>, usize, usize)> {
    match t.rank() {
        2 => {
            let (n, k) = (t.shape().d(0), t.shape().d(1));
            Ok(((0..n).map(|i| i * k).collect(), 1, k))
        }
        4 => {
            let (n, c, h, w) = t.shape().nchw("softmax_channels")?;
            let hw = h * w;
            let mut bases = Vec::with_capacity(n * hw);
            for s in 0..n {
                for p in 0..hw {
                    bases.push(s * c * hw + p);
                }
            }
            Ok((bases, hw, c))
        }
        r => Err(Error::Shape {
            op: "softmax_channels",
            detail: format!("needs a channel axis (rank 2 or 4), got rank {r}"),
        }),
    }
}

pub fn softmax_channels<S: Scalar>(tape: &mut Tape<S>, input: &Tensor<S>) -> Result<Tensor<S>> {
    let (bases, stride, count) = channel_groups(input)?;
    if count == 0 {
        return Err(Error::Shape {
            op: "softmax_channels",
            detail: "zero channels".into(),
        });
    }
    let mut out = input.values();
    for &base in &bases {
        let mut maxv = S::neg_infinity();
        for c in 0..count {
            maxv = maxv.max(out[base + c * stride]);
        }
        let mut sum = S::zero();
        for c in 0..count {
            let e = (out[base + c * stride] - maxv).exp();
            out[base + c * stride] = e;
            sum += e;
        }
        for c in 0..count {
            out[base + c * stride] = out[base + c * stride] / sum;
        }
    }
    let result = Tensor::from_parts(input.shape(), out, input.requires_grad());
    if tape.is_recording() && input.requires_grad() {
        let (x, o) = (input.clone(), result.clone());
        tape.record("softmax_channels", move || {
            let guard = o.grad_ref();
            let Some(g) = guard.as_ref() else { return Ok(()) };
            let od = o.data();
            let mut dx = vec![S::zero(); od.len()];
            for &base in &bases {
                let mut dot = S::zero();
                for c in 0..count {
                    let i = base + c * stride;
                    dot += g[i] * od[i];
                }
                for c in 0..count {
                    let i = base + c * stride;
                    dx[i] = od[i] * (g[i] - dot);
                }
            }
            drop(od);
            x.accumulate_grad(&dx);
            Ok(())
        });
    }
    Ok(result)
}

pub fn add<S: Scalar>(tape: &mut Tape<S>, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    check_same_shape("add", a, b)?;
    let out: Vec<S> = a.data().iter().zip(b.data().iter()).map(|(&x, &y)| x + y).collect();
    let requires = a.requires_grad() || b.requires_grad();
    let result = Tensor::from_parts(a.shape(), out, requires);
    if tape.is_recording() && requires {
        let (ta, tb, o) = (a.clone(), b.clone(), result.clone());
        tape.record("add", move || {
            let guard = o.grad_ref();
            let Some(g) = guard.as_ref() else { return Ok(()) };
            if ta.requires_grad() {
                ta.accumulate_grad(g);
            }
            if tb.requires_grad() {
                tb.accumulate_grad(g);
            }
            Ok(())
        });
    }
    Ok(result)
}

pub fn mul<S: Scalar>(tape: &mut Tape<S>, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    check_same_shape("mul", a, b)?;
    let out: Vec<S> = a.data().iter().zip(b.data().iter()).map(|(&x, &y)| x * y).collect();
    let requires = a.requires_grad() || b.requires_grad();
    let result = Tensor::from_parts(a.shape(), out, requires);
    if tape.is_recording() && requires {
        let (ta, tb, o) = (a.clone(), b.clone(), result.clone());
        tape.record("mul", move || {
            let guard = o.grad_ref();
            let Some(g) = guard.as_ref() else { return Ok(()) };
            if ta.requires_grad() {
                let bd = tb.data();
                let da: Vec<S> = g.iter().zip(bd.iter()).map(|(&gv, &bv)| gv * bv).collect();
                drop(bd);
                ta.accumulate_grad(&da);
            }
            if tb.requires_grad() {
                let ad = ta.data();
                let db: Vec<S> = g.iter().zip(ad.iter()).map(|(&gv, &av)| gv * av).collect();
                drop(ad);
                tb.accumulate_grad(&db);
            }
            Ok(())
        });
    }
    Ok(result)
}

/// Inverted dropout: at train time each element is zeroed with probability
/// `rate` and survivors are scaled by 1/(1-rate); eval is the identity.
pub fn dropout<S: Scalar>(
    tape: &mut Tape<S>,
    input: &Tensor<S>,
    rate: f64,
    mode: Mode,
    rng: &mut SplitMix64,
) -> Result<Tensor<S>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Usage(format!("dropout rate must be in [0,1), got {rate}")));
    }
    if mode == Mode::Eval || rate == 0.0 {
        let result = Tensor::from_parts(input.shape(), input.values(), input.requires_grad());
        if tape.is_recording() && input.requires_grad() {
            let (x, o) = (input.clone(), result.clone());
            tape.record("dropout", move || {
                let guard = o.grad_ref();
                let Some(g) = guard.as_ref() else { return Ok(()) };
                x.accumulate_grad(g);
                Ok(())
            });
        }
        return Ok(result);
    }

    let scale = S::from_f64(1.0 / (1.0 - rate));
    let mask: Vec<S> = (0..input.numel())
        .map(|_| if rng.next_f64() >= rate { scale } else { S::zero() })
        .collect();
    let out: Vec<S> = input.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    let result = Tensor::from_parts(input.shape(), out, input.requires_grad());
    if tape.is_recording() && input.requires_grad() {
        let (x, o) = (input.clone(), result.clone());
        tape.record("dropout", move || {
            let guard = o.grad_ref();
            let Some(g) = guard.as_ref() else { return Ok(()) };
            let dx: Vec<S> = g.iter().zip(&mask).map(|(&gv, &m)| gv * m).collect();
            x.accumulate_grad(&dx);
            Ok(())
        });
    }
    Ok(result)
}
