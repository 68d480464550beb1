//! Fully connected layer math.

use crate::error::{Error, Result};

use super::matmul::{matmul_abt_acc, matmul_acc, matmul_atb_acc};
use super::{Scalar, Shape, Tape, Tensor};

/// Affine map: input N,F  x  weight F,K  + bias K  ->  N,K.
pub fn dense<S: Scalar>(
    tape: &mut Tape<S>,
    input: &Tensor<S>,
    weight: &Tensor<S>,
    bias: &Tensor<S>,
) -> Result<Tensor<S>> {
    if input.rank() != 2 || weight.rank() != 2 {
        return Err(Error::Shape {
            op: "dense",
            detail: format!(
                "expected rank-2 input and weight, got {} and {}",
                input.shape(),
                weight.shape()
            ),
        });
    }
    let (n, f) = (input.shape().d(0), input.shape().d(1));
    let (wf, k) = (weight.shape().d(0), weight.shape().d(1));
    if f != wf {
        return Err(Error::Shape {
            op: "dense",
            detail: format!("inner extents differ: input {}, weight {}", input.shape(), weight.shape()),
        });
    }
    if bias.rank() != 1 || bias.numel() != k {
        return Err(Error::Shape {
            op: "dense",
            detail: format!("bias must be rank-1 of {k}, got {}", bias.shape()),
        });
    }

    let mut out = vec![S::zero(); n * k];
    {
        let x = input.data();
        let w = weight.data();
        let b = bias.data();
        for row in out.chunks_exact_mut(k) {
            row.copy_from_slice(&b);
        }
        matmul_acc(&mut out, &x, &w, n, f, k);
    }
    let requires = input.requires_grad() || weight.requires_grad() || bias.requires_grad();
    let result = Tensor::from_parts(Shape::new(&[n, k])?, out, requires);

    if tape.is_recording() && requires {
        let (x, w, b, o) = (input.clone(), weight.clone(), bias.clone(), result.clone());
        tape.record("dense", move || {
            let guard = o.grad_ref();
            let Some(g) = guard.as_ref() else { return Ok(()) };
            if x.requires_grad() {
                let wd = w.data();
                let mut dx = vec![S::zero(); n * f];
                matmul_abt_acc(&mut dx, g, &wd, n, k, f);
                drop(wd);
                x.accumulate_grad(&dx);
            }
            if w.requires_grad() {
                let xd = x.data();
                let mut dw = vec![S::zero(); f * k];
                matmul_atb_acc(&mut dw, &xd, g, n, f, k);
                drop(xd);
                w.accumulate_grad(&dw);
            }
            if b.requires_grad() {
                let mut db = vec![S::zero(); k];
                for row in g.chunks_exact(k) {
                    for (d, v) in db.iter_mut().zip(row) {
                        *d += *v;
                    }
                }
                b.accumulate_grad(&db);
            }
            Ok(())
        });
    }
    Ok(result)
}
