//! Channel concatenation / slicing, flattening and full reduction.

use crate::error::{Error, Result};

use super::{Scalar, Shape, Tape, Tensor};

/// Concatenate along the channel axis: a fills channels [0, Ca), b fills
/// [Ca, Ca+Cb). N, H, W must match.
pub fn concat_channels<S: Scalar>(
    tape: &mut Tape<S>,
    a: &Tensor<S>,
    b: &Tensor<S>,
) -> Result<Tensor<S>> {
    let (na, ca, ha, wa) = a.shape().nchw("concat_channels")?;
    let (nb, cb, hb, wb) = b.shape().nchw("concat_channels")?;
    if na != nb || ha != hb || wa != wb {
        return Err(Error::Shape {
            op: "concat_channels",
            detail: format!("batch/spatial mismatch: {} vs {}", a.shape(), b.shape()),
        });
    }
    let hw = ha * wa;
    let c = ca + cb;
    let mut out = vec![S::zero(); na * c * hw];
    {
        let ad = a.data();
        let bd = b.data();
        for s in 0..na {
            out[s * c * hw..s * c * hw + ca * hw]
                .copy_from_slice(&ad[s * ca * hw..(s + 1) * ca * hw]);
            out[s * c * hw + ca * hw..(s + 1) * c * hw]
                .copy_from_slice(&bd[s * cb * hw..(s + 1) * cb * hw]);
        }
    }
    let requires = a.requires_grad() || b.requires_grad();
    let result = Tensor::from_parts(Shape::new(&[na, c, ha, wa])?, out, requires);
    if tape.is_recording() && requires {
        let (ta, tb, o) = (a.clone(), b.clone(), result.clone());
        tape.record("concat_channels", move || {
            let guard = o.grad_ref();
            let Some(g) = guard.as_ref() else { return Ok(()) };
            if ta.requires_grad() {
                let mut da = vec![S::zero(); na * ca * hw];
                for s in 0..na {
                    da[s * ca * hw..(s + 1) * ca * hw]
                        .copy_from_slice(&g[s * c * hw..s * c * hw + ca * hw]);
                }
                ta.accumulate_grad(&da);
            }
            if tb.requires_grad() {
                let mut db = vec![S::zero(); na * cb * hw];
                for s in 0..na {
                    db[s * cb * hw..(s + 1) * cb * hw]
                        .copy_from_slice(&g[s * c * hw + ca * hw..(s + 1) * c * hw]);
                }
                tb.accumulate_grad(&db);
            }
            Ok(())
        });
    }
    Ok(result)
}

/// Take channels [from, to) of a rank-4 tensor.
pub fn slice_channels<S: Scalar>(
    tape: &mut Tape<S>,
    input: &Tensor<S>,
    from: usize,
    to: usize,
) -> Result<Tensor<S>> {
    let (n, c, h, w) = input.shape().nchw("slice_channels")?;
    if from >= to || to > c {
        return Err(Error::Shape {
            op: "slice_channels",
            detail: format!("invalid channel range {from}..{to} of {c}"),
        });
    }
    let hw = h * w;
    let cs = to - from;
    let mut out = vec![S::zero(); n * cs * hw];
    {
        let x = input.data();
        for s in 0..n {
            out[s * cs * hw..(s + 1) * cs * hw]
                .copy_from_slice(&x[s * c * hw + from * hw..s * c * hw + to * hw]);
        }
    }
    let result = Tensor::from_parts(Shape::new(&[n, cs, h, w])?, out, input.requires_grad());
    if tape.is_recording() && input.requires_grad() {
        let (x, o) = (input.clone(), result.clone());
        tape.record("slice_channels", move || {
            let guard = o.grad_ref();
            let Some(g) = guard.as_ref() else { return Ok(()) };
            let mut dx = vec![S::zero(); x.numel()];
            for s in 0..n {
                dx[s * c * hw + from * hw..s * c * hw + to * hw]
                    .copy_from_slice(&g[s * cs * hw..(s + 1) * cs * hw]);
            }
            x.accumulate_grad(&dx);
            Ok(())
        });
    }
    Ok(result)
}

/// View a rank-4 tensor as N x (C*H*W). Data order is unchanged.
pub fn flatten_spatial<S: Scalar>(tape: &mut Tape<S>, input: &Tensor<S>) -> Result<Tensor<S>> {
    let (n, c, h, w) = input.shape().nchw("flatten_spatial")?;
    let result = Tensor::from_parts(
        Shape::new(&[n, c * h * w])?,
        input.values(),
        input.requires_grad(),
    );
    if tape.is_recording() && input.requires_grad() {
        let (x, o) = (input.clone(), result.clone());
        tape.record("flatten_spatial", move || {
            let guard = o.grad_ref();
            let Some(g) = guard.as_ref() else { return Ok(()) };
            x.accumulate_grad(g);
            Ok(())
        });
    }
    Ok(result)
}

/// Sum of all elements, as a one-element tensor.
pub fn sum_all<S: Scalar>(tape: &mut Tape<S>, input: &Tensor<S>) -> Result<Tensor<S>> {
    let mut acc = S::zero();
    for v in input.data().iter() {
        acc += *v;
    }
    let result = Tensor::from_parts(Shape::new(&[1])?, vec![acc], input.requires_grad());
    if tape.is_recording() && input.requires_grad() {
        let (x, o) = (input.clone(), result.clone());
        tape.record("sum_all", move || {
            let guard = o.grad_ref();
            let Some(g) = guard.as_ref() else { return Ok(()) };
            let dx = vec![g[0]; x.numel()];
            x.accumulate_grad(&dx);
            Ok(())
        });
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{backward, Tape};

    #[test]
    fn concat_shapes_add_channels() {
        let mut tape = Tape::disabled();
        let a = Tensor::<f32>::zeros(&[1, 1, 2, 2]);
        let b = Tensor::<f32>::zeros(&[1, 2, 2, 2]);
        let y = concat_channels(&mut tape, &a, &b).unwrap();
        assert_eq!(y.shape().dims(), &[1, 3, 2, 2]);
    }

    #[test]
    fn concat_with_empty_channel_tensor_is_identity() {
        let mut tape = Tape::disabled();
        let a = Tensor::from_vec(&[1, 2, 2, 2], (0..8).map(|v| v as f32).collect()).unwrap();
        let empty = Tensor::<f32>::zeros(&[1, 0, 2, 2]);
        let y = concat_channels(&mut tape, &a, &empty).unwrap();
        assert_eq!(y.shape().dims(), &[1, 2, 2, 2]);
        assert_eq!(y.values(), a.values());
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let mut tape = Tape::<f32>::disabled();
        let a = Tensor::<f32>::zeros(&[1, 1, 2, 2]);
        let b = Tensor::<f32>::zeros(&[1, 1, 4, 4]);
        assert!(concat_channels(&mut tape, &a, &b).is_err());
    }

    #[test]
    fn concat_gradient_splits() {
        let mut tape = Tape::new();
        let a = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0f32; 4]).unwrap().requiring_grad();
        let b = Tensor::from_vec(&[1, 2, 2, 2], vec![2.0f32; 8]).unwrap().requiring_grad();
        let y = concat_channels(&mut tape, &a, &b).unwrap();
        let s = sum_all(&mut tape, &y).unwrap();
        backward(&mut tape, &s).unwrap();
        assert_eq!(a.grad().unwrap(), vec![1.0; 4]);
        assert_eq!(b.grad().unwrap(), vec![1.0; 8]);
    }

    #[test]
    fn slice_then_concat_roundtrips() {
        let mut tape = Tape::disabled();
        let x = Tensor::from_vec(&[2, 3, 2, 2], (0..24).map(|v| v as f32).collect()).unwrap();
        let lo = slice_channels(&mut tape, &x, 0, 1).unwrap();
        let hi = slice_channels(&mut tape, &x, 1, 3).unwrap();
        let y = concat_channels(&mut tape, &lo, &hi).unwrap();
        assert_eq!(y.values(), x.values());
    }
}
