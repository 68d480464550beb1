//! 2D convolution (cross-correlation) and 2x2 stride-2 transposed convolution.
//!
//! Convolutions run through im2col + matrix kernels; the backward pass
//! rebuilds the column buffer from the saved input rather than keeping it
//! alive, trading a little recompute for a much smaller live set.

use crate::error::{Error, Result};

use super::matmul::{matmul_abt_acc, matmul_acc, matmul_atb_acc};
use super::{Scalar, Shape, Tape, Tensor};

struct ConvDims {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

fn conv_dims<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    bias: &Tensor<S>,
    stride: usize,
    pad: usize,
) -> Result<ConvDims> {
    let (n, cin, h, w) = input.shape().nchw("conv2d")?;
    let (cout, wcin, kh, kw) = weight.shape().nchw("conv2d")?;
    if wcin != cin {
        return Err(Error::Shape {
            op: "conv2d",
            detail: format!(
                "input has {cin} channels but weight expects {wcin} (weight {})",
                weight.shape()
            ),
        });
    }
    if bias.rank() != 1 || bias.numel() != cout {
        return Err(Error::Shape {
            op: "conv2d",
            detail: format!("bias must be rank-1 of {cout}, got {}", bias.shape()),
        });
    }
    if stride == 0 {
        return Err(Error::Usage("conv2d stride must be positive".into()));
    }
    if kh > h + 2 * pad || kw > w + 2 * pad {
        return Err(Error::Shape {
            op: "conv2d",
            detail: format!(
                "kernel {kh}x{kw} exceeds padded input {}x{}",
                h + 2 * pad,
                w + 2 * pad
            ),
        });
    }
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    Ok(ConvDims { n, cin, h, w, cout, kh, kw, stride, pad, oh, ow })
}

/// Unpack one sample into a [cin*kh*kw x oh*ow] column buffer.
fn im2col<S: Scalar>(x: &[S], d: &ConvDims, col: &mut [S]) {
    let p = d.oh * d.ow;
    let (h, w, ow) = (d.h as isize, d.w as isize, d.ow);
    for ci in 0..d.cin {
        let plane = &x[ci * d.h * d.w..(ci + 1) * d.h * d.w];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = (ci * d.kh + ki) * d.kw + kj;
                let dst = &mut col[row * p..(row + 1) * p];
                for oy in 0..d.oh {
                    let iy = (oy * d.stride + ki) as isize - d.pad as isize;
                    let drow = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h {
                        drow.fill(S::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    if d.stride == 1 {
                        let off = kj as isize - d.pad as isize;
                        // valid ox range: 0 <= ox + off < w
                        let lo = (-off).max(0) as usize;
                        let hi = ((w - off).max(0) as usize).min(ow);
                        drow[..lo.min(ow)].fill(S::zero());
                        if lo < hi {
                            drow[lo..hi]
                                .copy_from_slice(&src[(lo as isize + off) as usize..(hi as isize + off) as usize]);
                        }
                        drow[hi.max(lo).min(ow)..].fill(S::zero());
                    } else {
                        for (ox, dv) in drow.iter_mut().enumerate() {
                            let ix = (ox * d.stride + kj) as isize - d.pad as isize;
                            *dv = if ix >= 0 && ix < w { src[ix as usize] } else { S::zero() };
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add a column buffer back onto one input sample.
fn col2im_acc<S: Scalar>(col: &[S], d: &ConvDims, dx: &mut [S]) {
    let p = d.oh * d.ow;
    let (h, w) = (d.h as isize, d.w as isize);
    for ci in 0..d.cin {
        let plane = &mut dx[ci * d.h * d.w..(ci + 1) * d.h * d.w];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = (ci * d.kh + ki) * d.kw + kj;
                let src = &col[row * p..(row + 1) * p];
                for oy in 0..d.oh {
                    let iy = (oy * d.stride + ki) as isize - d.pad as isize;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    for ox in 0..d.ow {
                        let ix = (ox * d.stride + kj) as isize - d.pad as isize;
                        if ix >= 0 && ix < w {
                            dst[ix as usize] += src[oy * d.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Batched 2D cross-correlation.
///
/// input N,Cin,H,W; weight Cout,Cin,kh,kw; bias Cout. Output spatial extent
/// is `(H + 2*padding - kh) / stride + 1` (floor), same for width.
pub fn conv2d<S: Scalar>(
    tape: &mut Tape<S>,
    input: &Tensor<S>,
    weight: &Tensor<S>,
    bias: &Tensor<S>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<S>> {
    let d = conv_dims(input, weight, bias, stride, padding)?;
    let p = d.oh * d.ow;
    let r = d.cin * d.kh * d.kw;
    let sample_in = d.cin * d.h * d.w;
    let sample_out = d.cout * p;

    // a 1x1/stride-1/no-pad kernel reads the input directly as its column
    // matrix, skipping im2col
    let direct = d.kh == 1 && d.kw == 1 && d.stride == 1 && d.pad == 0;

    let mut out = vec![S::zero(); d.n * sample_out];
    {
        let x = input.data();
        let wd = weight.data();
        let bd = bias.data();
        let mut col = vec![S::zero(); if direct { 0 } else { r * p }];
        for s in 0..d.n {
            let xs = &x[s * sample_in..(s + 1) * sample_in];
            let cols: &[S] = if direct {
                xs
            } else {
                im2col(xs, &d, &mut col);
                &col
            };
            let orow = &mut out[s * sample_out..(s + 1) * sample_out];
            for co in 0..d.cout {
                orow[co * p..(co + 1) * p].fill(bd[co]);
            }
            matmul_acc(orow, &wd, cols, d.cout, r, p);
        }
    }

    let requires = input.requires_grad() || weight.requires_grad() || bias.requires_grad();
    let out_shape = Shape::new(&[d.n, d.cout, d.oh, d.ow])?;
    let result = Tensor::from_parts(out_shape, out, requires);

    if tape.is_recording() && requires {
        let (x, w, b, o) = (input.clone(), weight.clone(), bias.clone(), result.clone());
        tape.record("conv2d", move || {
            let guard = o.grad_ref();
            let Some(g) = guard.as_ref() else { return Ok(()) };
            let xd = x.data();
            let wd = w.data();

            let mut dw = if w.requires_grad() { Some(vec![S::zero(); wd.len()]) } else { None };
            let mut db = if b.requires_grad() { Some(vec![S::zero(); d.cout]) } else { None };
            let mut dx = if x.requires_grad() { Some(vec![S::zero(); xd.len()]) } else { None };

            let mut col = vec![S::zero(); if direct { 0 } else { r * p }];
            let mut dcol = vec![S::zero(); if direct { 0 } else { r * p }];
            for s in 0..d.n {
                let gs = &g[s * sample_out..(s + 1) * sample_out];
                let xs = &xd[s * sample_in..(s + 1) * sample_in];
                if let Some(dw) = dw.as_mut() {
                    let cols: &[S] = if direct {
                        xs
                    } else {
                        im2col(xs, &d, &mut col);
                        &col
                    };
                    matmul_abt_acc(dw, gs, cols, d.cout, p, r);
                }
                if let Some(db) = db.as_mut() {
                    for co in 0..d.cout {
                        let mut acc = S::zero();
                        for v in &gs[co * p..(co + 1) * p] {
                            acc += *v;
                        }
                        db[co] += acc;
                    }
                }
                if let Some(dx) = dx.as_mut() {
                    let dxs = &mut dx[s * sample_in..(s + 1) * sample_in];
                    if direct {
                        matmul_atb_acc(dxs, &wd, gs, d.cout, r, p);
                    } else {
                        dcol.fill(S::zero());
                        matmul_atb_acc(&mut dcol, &wd, gs, d.cout, r, p);
                        col2im_acc(&dcol, &d, dxs);
                    }
                }
            }
            drop(xd);
            drop(wd);
            if let Some(dw) = dw {
                w.accumulate_grad(&dw);
            }
            if let Some(db) = db {
                b.accumulate_grad(&db);
            }
            if let Some(dx) = dx {
                x.accumulate_grad(&dx);
            }
            Ok(())
        });
    }
    Ok(result)
}

/// 2x2 transposed convolution with stride fixed at 2; doubles H and W.
///
/// weight layout is Cin,Cout,2,2.
pub fn up_conv2d<S: Scalar>(
    tape: &mut Tape<S>,
    input: &Tensor<S>,
    weight: &Tensor<S>,
    bias: &Tensor<S>,
) -> Result<Tensor<S>> {
    let (n, cin, h, w) = input.shape().nchw("up_conv2d")?;
    let (wcin, cout, kh, kw) = weight.shape().nchw("up_conv2d")?;
    if kh != 2 || kw != 2 {
        return Err(Error::UnsupportedKernel { kh, kw });
    }
    if wcin != cin {
        return Err(Error::Shape {
            op: "up_conv2d",
            detail: format!("input has {cin} channels but weight expects {wcin}"),
        });
    }
    if bias.rank() != 1 || bias.numel() != cout {
        return Err(Error::Shape {
            op: "up_conv2d",
            detail: format!("bias must be rank-1 of {cout}, got {}", bias.shape()),
        });
    }
    let (oh, ow) = (2 * h, 2 * w);
    let sample_in = cin * h * w;
    let sample_out = cout * oh * ow;

    let mut out = vec![S::zero(); n * sample_out];
    {
        let x = input.data();
        let wd = weight.data();
        let bd = bias.data();
        for s in 0..n {
            let xs = &x[s * sample_in..(s + 1) * sample_in];
            let os = &mut out[s * sample_out..(s + 1) * sample_out];
            for co in 0..cout {
                os[co * oh * ow..(co + 1) * oh * ow].fill(bd[co]);
            }
            for ci in 0..cin {
                let plane = &xs[ci * h * w..(ci + 1) * h * w];
                for co in 0..cout {
                    let oplane = &mut os[co * oh * ow..(co + 1) * oh * ow];
                    for (di, dj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let wv = wd[((ci * cout + co) * 2 + di) * 2 + dj];
                        for i in 0..h {
                            let xrow = &plane[i * w..(i + 1) * w];
                            let orow = &mut oplane[(2 * i + di) * ow..(2 * i + di + 1) * ow];
                            for j in 0..w {
                                orow[2 * j + dj] += wv * xrow[j];
                            }
                        }
                    }
                }
            }
        }
    }

    let requires = input.requires_grad() || weight.requires_grad() || bias.requires_grad();
    let result = Tensor::from_parts(Shape::new(&[n, cout, oh, ow])?, out, requires);

    if tape.is_recording() && requires {
        let (x, wt, b, o) = (input.clone(), weight.clone(), bias.clone(), result.clone());
        tape.record("up_conv2d", move || {
            let guard = o.grad_ref();
            let Some(g) = guard.as_ref() else { return Ok(()) };
            let xd = x.data();
            let wd = wt.data();

            let mut dw = if wt.requires_grad() { Some(vec![S::zero(); wd.len()]) } else { None };
            let mut db = if b.requires_grad() { Some(vec![S::zero(); cout]) } else { None };
            let mut dx = if x.requires_grad() { Some(vec![S::zero(); xd.len()]) } else { None };

            for s in 0..n {
                let gs = &g[s * sample_out..(s + 1) * sample_out];
                let xs = &xd[s * sample_in..(s + 1) * sample_in];
                if let Some(db) = db.as_mut() {
                    for co in 0..cout {
                        let mut acc = S::zero();
                        for v in &gs[co * oh * ow..(co + 1) * oh * ow] {
                            acc += *v;
                        }
                        db[co] += acc;
                    }
                }
                for ci in 0..cin {
                    for co in 0..cout {
                        let gplane = &gs[co * oh * ow..(co + 1) * oh * ow];
                        for (di, dj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                            let widx = ((ci * cout + co) * 2 + di) * 2 + dj;
                            let wv = wd[widx];
                            let mut wacc = S::zero();
                            for i in 0..h {
                                let grow = &gplane[(2 * i + di) * ow..(2 * i + di + 1) * ow];
                                let xrow = &xs[ci * h * w + i * w..ci * h * w + (i + 1) * w];
                                if let Some(dx) = dx.as_mut() {
                                    let dxrow = &mut dx[s * sample_in + ci * h * w + i * w
                                        ..s * sample_in + ci * h * w + (i + 1) * w];
                                    for j in 0..w {
                                        let gv = grow[2 * j + dj];
                                        dxrow[j] += wv * gv;
                                        wacc += xrow[j] * gv;
                                    }
                                } else {
                                    for j in 0..w {
                                        wacc += xrow[j] * grow[2 * j + dj];
                                    }
                                }
                            }
                            if let Some(dw) = dw.as_mut() {
                                dw[widx] += wacc;
                            }
                        }
                    }
                }
            }
            drop(xd);
            drop(wd);
            if let Some(dw) = dw {
                wt.accumulate_grad(&dw);
            }
            if let Some(db) = db {
                b.accumulate_grad(&db);
            }
            if let Some(dx) = dx {
                x.accumulate_grad(&dx);
            }
            Ok(())
        });
    }
    Ok(result)
}
