//! 2x2 max pooling and global average pooling.

use crate::error::{Error, Result};

use super::{Scalar, Shape, Tape, Tensor};

/// 2x2 max pooling with stride 2. H and W must be even. The backward pass
/// routes each gradient to the first (row-major) maximal element of its
/// window.
pub fn maxpool2d<S: Scalar>(tape: &mut Tape<S>, input: &Tensor<S>) -> Result<Tensor<S>> {
    let (n, c, h, w) = input.shape().nchw("maxpool2d")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape {
            op: "maxpool2d",
            detail: format!("spatial extents must be even, got {h}x{w}"),
        });
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![S::zero(); n * c * oh * ow];
    let mut argmax = vec![0usize; out.len()];
    {
        let x = input.data();
        for pc in 0..n * c {
            let plane = &x[pc * h * w..(pc + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = S::neg_infinity();
                    let mut best_idx = 0usize;
                    for di in 0..2 {
                        for dj in 0..2 {
                            let idx = (2 * oy + di) * w + 2 * ox + dj;
                            if plane[idx] > best {
                                best = plane[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out[pc * oh * ow + oy * ow + ox] = best;
                    argmax[pc * oh * ow + oy * ow + ox] = pc * h * w + best_idx;
                }
            }
        }
    }
    let result = Tensor::from_parts(Shape::new(&[n, c, oh, ow])?, out, input.requires_grad());
    if tape.is_recording() && input.requires_grad() {
        let (x, o) = (input.clone(), result.clone());
        tape.record("maxpool2d", move || {
            let guard = o.grad_ref();
            let Some(g) = guard.as_ref() else { return Ok(()) };
            let mut dx = vec![S::zero(); x.numel()];
            for (i, &src) in argmax.iter().enumerate() {
                dx[src] += g[i];
            }
            x.accumulate_grad(&dx);
            Ok(())
        });
    }
    Ok(result)
}

/// Mean over the spatial extent: N,C,H,W -> N,C.
pub fn global_avg_pool<S: Scalar>(tape: &mut Tape<S>, input: &Tensor<S>) -> Result<Tensor<S>> {
    let (n, c, h, w) = input.shape().nchw("global_avg_pool")?;
    let hw = h * w;
    let inv = S::from_f64(1.0 / hw as f64);
    let mut out = vec![S::zero(); n * c];
    {
        let x = input.data();
        for pc in 0..n * c {
            let mut acc = S::zero();
            for v in &x[pc * hw..(pc + 1) * hw] {
                acc += *v;
            }
            out[pc] = acc * inv;
        }
    }
    let result = Tensor::from_parts(Shape::new(&[n, c])?, out, input.requires_grad());
    if tape.is_recording() && input.requires_grad() {
        let (x, o) = (input.clone(), result.clone());
        tape.record("global_avg_pool", move || {
            let guard = o.grad_ref();
            let Some(g) = guard.as_ref() else { return Ok(()) };
            let mut dx = vec![S::zero(); x.numel()];
            for pc in 0..n * c {
                let gv = g[pc] * inv;
                for d in &mut dx[pc * hw..(pc + 1) * hw] {
                    *d = gv;
                }
            }
            x.accumulate_grad(&dx);
            Ok(())
        });
    }
    Ok(result)
}
