//! Bilinear resampling with half-pixel-center alignment.

use crate::error::{Error, Result};

use super::{GrayImage, Pixels};

/// Resize to `out_h` x `out_w` by bilinear interpolation. Source coordinates
/// use half-pixel centers: src = (dst + 0.5) * scale - 0.5, clamped to the
/// image. Output is in real form.
pub fn resize_bilinear(image: &GrayImage, out_h: usize, out_w: usize) -> Result<GrayImage> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Usage("resize target extents must be positive".into()));
    }
    let src = image.real_pixels();
    let (w, h) = (image.width, image.height);
    let sx = w as f64 / out_w as f64;
    let sy = h as f64 / out_h as f64;

    let mut out = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = (fy - y0 as f64) as f32;
        for x in 0..out_w {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = (fx - x0 as f64) as f32;

            let top = src[y0 * w + x0] * (1.0 - wx) + src[y0 * w + x1] * wx;
            let bottom = src[y1 * w + x0] * (1.0 - wx) + src[y1 * w + x1] * wx;
            out.push(top * (1.0 - wy) + bottom * wy);
        }
    }
    Ok(GrayImage { width: out_w, height: out_h, pixels: Pixels::Real(out) })
}
