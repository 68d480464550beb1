//! Training losses.

use crate::error::{Error, Result};

use super::{check_same_shape, Scalar, Shape, Tape, Tensor};

/// Loss kinds supported by [`loss`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Mean binary cross-entropy over all elements. Predictions are
    /// probabilities, clamped into [1e-7, 1 - 1e-7] before the logs.
    BinaryCeOnProbabilities,
    /// Mean softmax cross-entropy over the batch. Predictions are rank-2
    /// logits N,K; targets are integer class indices stored in a rank-1
    /// tensor of length N.
    SoftmaxCeOnLogits,
}

pub fn loss<S: Scalar>(
    tape: &mut Tape<S>,
    prediction: &Tensor<S>,
    target: &Tensor<S>,
    kind: LossKind,
) -> Result<Tensor<S>> {
    match kind {
        LossKind::BinaryCeOnProbabilities => binary_ce(tape, prediction, target),
        LossKind::SoftmaxCeOnLogits => softmax_ce(tape, prediction, target),
    }
}

const CLAMP_LO: f64 = 1e-7;

fn binary_ce<S: Scalar>(
    tape: &mut Tape<S>,
    prediction: &Tensor<S>,
    target: &Tensor<S>,
) -> Result<Tensor<S>> {
    check_same_shape("binary_ce", prediction, target)?;
    let n = prediction.numel();
    let lo = S::from_f64(CLAMP_LO);
    let hi = S::from_f64(1.0 - CLAMP_LO);

    let mut acc = 0.0f64;
    {
        let p = prediction.data();
        let t = target.data();
        for (&pv, &tv) in p.iter().zip(t.iter()) {
            let pc = pv.max(lo).min(hi).as_f64();
            let tv = tv.as_f64();
            acc -= tv * pc.ln() + (1.0 - tv) * (1.0 - pc).ln();
        }
    }
    let value = S::from_f64(acc / n as f64);
    let result = Tensor::from_parts(Shape::new(&[1])?, vec![value], prediction.requires_grad());

    if tape.is_recording() && prediction.requires_grad() {
        let (p, t, o) = (prediction.clone(), target.clone(), result.clone());
        tape.record("binary_ce", move || {
            let guard = o.grad_ref();
            let Some(g) = guard.as_ref() else { return Ok(()) };
            let gscale = g[0] / S::from_f64(n as f64);
            let pd = p.data();
            let td = t.data();
            let dx: Vec<S> = pd
                .iter()
                .zip(td.iter())
                .map(|(&pv, &tv)| {
                    // clamped regions are locally constant
                    if pv <= lo || pv >= hi {
                        S::zero()
                    } else {
                        gscale * ((S::one() - tv) / (S::one() - pv) - tv / pv)
                    }
                })
                .collect();
            drop(pd);
            drop(td);
            p.accumulate_grad(&dx);
            Ok(())
        });
    }
    Ok(result)
}

fn softmax_ce<S: Scalar>(
    tape: &mut Tape<S>,
    logits: &Tensor<S>,
    target: &Tensor<S>,
) -> Result<Tensor<S>> {
    if logits.rank() != 2 {
        return Err(Error::Shape {
            op: "softmax_ce",
            detail: format!("logits must be rank-2 N,K, got {}", logits.shape()),
        });
    }
    let (n, k) = (logits.shape().d(0), logits.shape().d(1));
    if target.rank() != 1 || target.numel() != n {
        return Err(Error::Shape {
            op: "softmax_ce",
            detail: format!("targets must be rank-1 of {n}, got {}", target.shape()),
        });
    }
    let classes: Vec<usize> = {
        let t = target.data();
        let mut out = Vec::with_capacity(n);
        for &tv in t.iter() {
            let f = tv.as_f64();
            let c = f.round();
            if (f - c).abs() > 1e-6 || c < 0.0 || c >= k as f64 {
                return Err(Error::Usage(format!(
                    "softmax_ce targets must be integer class indices in [0,{k}), got {f}"
                )));
            }
            out.push(c as usize);
        }
        out
    };

    // softmax probabilities are reused by the backward pass
    let mut probs = vec![0.0f64; n * k];
    let mut acc = 0.0f64;
    {
        let z = logits.data();
        for i in 0..n {
            let row = &z[i * k..(i + 1) * k];
            let maxv = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
            let mut sum = 0.0f64;
            for (j, v) in row.iter().enumerate() {
                let e = (v.as_f64() - maxv).exp();
                probs[i * k + j] = e;
                sum += e;
            }
            for j in 0..k {
                probs[i * k + j] /= sum;
            }
            acc -= probs[i * k + classes[i]].max(f64::MIN_POSITIVE).ln();
        }
    }
    let value = S::from_f64(acc / n as f64);
    let result = Tensor::from_parts(Shape::new(&[1])?, vec![value], logits.requires_grad());

    if tape.is_recording() && logits.requires_grad() {
        let (z, o) = (logits.clone(), result.clone());
        tape.record("softmax_ce", move || {
            let guard = o.grad_ref();
            let Some(g) = guard.as_ref() else { return Ok(()) };
            let gscale = g[0].as_f64() / n as f64;
            let mut dz = vec![S::zero(); n * k];
            for i in 0..n {
                for j in 0..k {
                    let onehot = if j == classes[i] { 1.0 } else { 0.0 };
                    dz[i * k + j] = S::from_f64(gscale * (probs[i * k + j] - onehot));
                }
            }
            z.accumulate_grad(&dz);
            Ok(())
        });
    }
    Ok(result)
}
