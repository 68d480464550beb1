//! Rotation/translation augmentation and minority-class balancing.
//!
//! The stock transform set holds the twelve augmentations used to balance
//! the TB class: rotations of +/-5 and +/-10 degrees and single-axis
//! translations of +/-10% and +/-15%.

use crate::error::{Error, Result};
use crate::image::{Class, Dataset, GrayImage, Pixels, Sample};
use crate::rng::{mix64, SplitMix64};

/// One augmentation transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TransformSpec {
    /// Rotation about the image center, positive = clockwise, bilinear
    /// sampling, out-of-bounds sources take `fill`.
    Rotate { degrees: f64, fill: f32 },
    /// Shift by round(dx_frac*width) columns and round(dy_frac*height) rows;
    /// vacated pixels take `fill`.
    Translate { dx_frac: f64, dy_frac: f64, fill: f32 },
}

impl TransformSpec {
    /// Sanity bounds: |degrees| <= 45, |dx|,|dy| <= 0.5.
    pub fn validate(&self) -> Result<()> {
        match *self {
            TransformSpec::Rotate { degrees, .. } => {
                if degrees.abs() > 45.0 {
                    return Err(Error::Usage(format!("rotation {degrees} exceeds 45 degrees")));
                }
            }
            TransformSpec::Translate { dx_frac, dy_frac, .. } => {
                if dx_frac.abs() > 0.5 || dy_frac.abs() > 0.5 {
                    return Err(Error::Usage(format!(
                        "translation ({dx_frac},{dy_frac}) exceeds half the extent"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn apply(&self, image: &GrayImage) -> Result<GrayImage> {
        self.validate()?;
        match *self {
            TransformSpec::Rotate { degrees, fill } => Ok(rotate(image, degrees, fill)),
            TransformSpec::Translate { dx_frac, dy_frac, fill } => {
                Ok(translate(image, dx_frac, dy_frac, fill))
            }
        }
    }

    /// Short stable label used in sample ids and manifests.
    pub fn label(&self) -> String {
        match *self {
            TransformSpec::Rotate { degrees, .. } => format!("rot{degrees:+.0}"),
            TransformSpec::Translate { dx_frac, dy_frac, .. } => {
                format!("tx{:+.0}_ty{:+.0}", dx_frac * 100.0, dy_frac * 100.0)
            }
        }
    }
}

/// The twelve-member stock set drawn from during balancing.
pub fn stock_transforms(fill: f32) -> Vec<TransformSpec> {
    let mut set = Vec::with_capacity(12);
    for d in [5.0, -5.0, 10.0, -10.0] {
        set.push(TransformSpec::Rotate { degrees: d, fill });
    }
    for f in [0.10, -0.10, 0.15, -0.15] {
        set.push(TransformSpec::Translate { dx_frac: f, dy_frac: 0.0, fill });
        set.push(TransformSpec::Translate { dx_frac: 0.0, dy_frac: f, fill });
    }
    set
}

/// Rotate about the image center with bilinear sampling. Positive degrees
/// rotate clockwise on screen (y axis pointing down). Output extents equal
/// input extents; sources outside the image take `fill`.
pub fn rotate(image: &GrayImage, degrees: f64, fill: f32) -> GrayImage {
    let src = image.real_pixels();
    let (w, h) = (image.width, image.height);
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    // inverse map: rotate destination coords by -degrees around the center
    let theta = -degrees.to_radians();
    let (sin, cos) = theta.sin_cos();

    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let dy = y as f64 - cy;
        for x in 0..w {
            let dx = x as f64 - cx;
            let sx = cx + cos * dx - sin * dy;
            let sy = cy + sin * dx + cos * dy;
            out.push(sample_bilinear(&src, w, h, sx, sy, fill));
        }
    }
    GrayImage { width: w, height: h, pixels: Pixels::Real(out) }
}

fn sample_bilinear(src: &[f32], w: usize, h: usize, x: f64, y: f64, fill: f32) -> f32 {
    if x < -0.5 || y < -0.5 || x > w as f64 - 0.5 || y > h as f64 - 0.5 {
        return fill;
    }
    let x0 = x.floor();
    let y0 = y.floor();
    let wx = (x - x0) as f32;
    let wy = (y - y0) as f32;
    let at = |ix: f64, iy: f64| -> f32 {
        if ix < 0.0 || iy < 0.0 || ix >= w as f64 || iy >= h as f64 {
            fill
        } else {
            src[iy as usize * w + ix as usize]
        }
    };
    let top = at(x0, y0) * (1.0 - wx) + at(x0 + 1.0, y0) * wx;
    let bottom = at(x0, y0 + 1.0) * (1.0 - wx) + at(x0 + 1.0, y0 + 1.0) * wx;
    top * (1.0 - wy) + bottom * wy
}

/// Integer shift by round(dx_frac*width), round(dy_frac*height).
pub fn translate(image: &GrayImage, dx_frac: f64, dy_frac: f64, fill: f32) -> GrayImage {
    let src = image.real_pixels();
    let (w, h) = (image.width, image.height);
    let sx = (dx_frac * w as f64).round() as isize;
    let sy = (dy_frac * h as f64).round() as isize;

    let mut out = vec![fill; w * h];
    for y in 0..h as isize {
        let src_y = y - sy;
        if src_y < 0 || src_y >= h as isize {
            continue;
        }
        for x in 0..w as isize {
            let src_x = x - sx;
            if src_x < 0 || src_x >= w as isize {
                continue;
            }
            out[y as usize * w + x as usize] = src[src_y as usize * w + src_x as usize];
        }
    }
    GrayImage { width: w, height: h, pixels: Pixels::Real(out) }
}

/// Add `copies_per_image` augmented variants of every original minority
/// sample, drawn per sample id (deterministically, without replacement) from
/// the stock set. Originals are kept; new samples carry `augmented = true`.
pub fn balance_augment(
    dataset: &Dataset,
    minority_label: Class,
    copies_per_image: usize,
    seed: u64,
) -> Result<Dataset> {
    let stock = stock_transforms(0.0);
    if copies_per_image < 1 || copies_per_image > stock.len() {
        return Err(Error::Usage(format!(
            "copies_per_image must be in 1..={}, got {copies_per_image}",
            stock.len()
        )));
    }
    let mut out = dataset.clone();
    for sample in &dataset.samples {
        if sample.label != Some(minority_label) || sample.augmented {
            continue;
        }
        let mut rng = SplitMix64::new(mix64(seed ^ fnv1a(sample.id.as_bytes())));
        let picks = rng.sample_indices(stock.len(), copies_per_image);
        for pick in picks {
            let spec = stock[pick];
            let image = spec.apply(&sample.image.to_real())?;
            // masks ride along under the same transform (binary via 0.5)
            let mask = sample
                .mask
                .as_ref()
                .map(|m| -> Result<crate::image::BinaryMask> {
                    let moved = spec.apply(&m.to_image().to_real())?;
                    Ok(crate::image::BinaryMask::from_image(&moved))
                })
                .transpose()?;
            out.samples.push(Sample {
                id: format!("{}@{}", sample.id, spec.label()),
                image,
                mask,
                label: sample.label,
                augmented: true,
                transform: Some(spec),
            });
        }
    }
    Ok(out)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}
