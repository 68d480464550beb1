//! Grayscale images, binary masks, codecs, resizing, normalization,
//! dataset ingestion and the checkpoint format.

mod checkpoint;
mod dataset;
mod pnm;
mod resize;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_raw,
    save_checkpoint, CHECKPOINT_MAGIC,
};
pub use dataset::{load_dataset, Class, Dataset, DatasetLayout, Sample};
pub use pnm::{decode_pgm, encode_pgm, read_pgm, write_pgm, write_ppm};
pub use resize::resize_bilinear;

use crate::error::{Error, Result};

/// Pixel storage of a [`GrayImage`]: 8-bit for files, unit-interval reals
/// for computation.
#[derive(Debug, Clone, PartialEq)]
pub enum Pixels {
    Byte(Vec<u8>),
    Real(Vec<f32>),
}

/// A grayscale image in either 8-bit storage form or real working form.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Pixels,
}

impl GrayImage {
    pub fn from_bytes(width: usize, height: usize, data: Vec<u8>) -> Result<GrayImage> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::Usage(format!(
                "image {width}x{height} needs {} pixels, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(GrayImage { width, height, pixels: Pixels::Byte(data) })
    }

    pub fn from_reals(width: usize, height: usize, data: Vec<f32>) -> Result<GrayImage> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::Usage(format!(
                "image {width}x{height} needs {} pixels, got {}",
                width * height,
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { context: "image pixels".into() });
        }
        Ok(GrayImage { width, height, pixels: Pixels::Real(data) })
    }

    pub fn is_byte_form(&self) -> bool {
        matches!(self.pixels, Pixels::Byte(_))
    }

    /// Working form: bytes map to v/255 in [0,1]; real images pass through.
    pub fn to_real(&self) -> GrayImage {
        match &self.pixels {
            Pixels::Real(_) => self.clone(),
            Pixels::Byte(b) => GrayImage {
                width: self.width,
                height: self.height,
                pixels: Pixels::Real(b.iter().map(|&v| v as f32 / 255.0).collect()),
            },
        }
    }

    /// Storage form: reals are clamped to [0,1] and scaled to 0..=255,
    /// rounding half away from zero. Byte images pass through.
    pub fn to_bytes(&self) -> GrayImage {
        match &self.pixels {
            Pixels::Byte(_) => self.clone(),
            Pixels::Real(r) => GrayImage {
                width: self.width,
                height: self.height,
                pixels: Pixels::Byte(
                    r.iter()
                        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
                        .collect(),
                ),
            },
        }
    }

    /// Real-form pixel buffer (converting if needed).
    pub fn real_pixels(&self) -> Vec<f32> {
        match &self.pixels {
            Pixels::Real(r) => r.clone(),
            Pixels::Byte(b) => b.iter().map(|&v| v as f32 / 255.0).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Row-major boolean mask, paired with images of the same extents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<BinaryMask> {
        if bits.len() != width * height {
            return Err(Error::Usage(format!(
                "mask {width}x{height} needs {} bits, got {}",
                width * height,
                bits.len()
            )));
        }
        Ok(BinaryMask { width, height, bits })
    }

    pub fn filled(width: usize, height: usize, value: bool) -> BinaryMask {
        BinaryMask { width, height, bits: vec![value; width * height] }
    }

    /// Threshold a grayscale image: strictly more than half intensity is
    /// foreground.
    pub fn from_image(img: &GrayImage) -> BinaryMask {
        let bits = match &img.pixels {
            Pixels::Byte(b) => b.iter().map(|&v| v > 127).collect(),
            Pixels::Real(r) => r.iter().map(|&v| v > 0.5).collect(),
        };
        BinaryMask { width: img.width, height: img.height, bits }
    }

    /// Render as a 0/255 byte image.
    pub fn to_image(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            pixels: Pixels::Byte(self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect()),
        }
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Nearest-neighbor resample to new extents (half-pixel centers).
    pub fn resize_nearest(&self, out_h: usize, out_w: usize) -> Result<BinaryMask> {
        if out_h == 0 || out_w == 0 {
            return Err(Error::Usage("mask resize target must be positive".into()));
        }
        let sx = self.width as f64 / out_w as f64;
        let sy = self.height as f64 / out_h as f64;
        let mut bits = Vec::with_capacity(out_h * out_w);
        for y in 0..out_h {
            let src_y = (((y as f64 + 0.5) * sy - 0.5).round().max(0.0) as usize).min(self.height - 1);
            for x in 0..out_w {
                let src_x =
                    (((x as f64 + 0.5) * sx - 0.5).round().max(0.0) as usize).min(self.width - 1);
                bits.push(self.bits[src_y * self.width + src_x]);
            }
        }
        Ok(BinaryMask { width: out_w, height: out_h, bits })
    }
}

/// Scalar mean and population standard deviation of a training set's pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetStats {
    pub mean: f64,
    pub std: f64,
}

const STD_FLOOR: f64 = 1e-8;

impl DatasetStats {
    /// The divisor actually used by the normalizer (std floored to 1 when
    /// degenerate).
    pub fn effective_std(&self) -> f64 {
        if self.std < STD_FLOOR {
            1.0
        } else {
            self.std
        }
    }
}

/// Mean and population std over every pixel of every image in `images`
/// (real form).
pub fn dataset_stats<'a, I>(images: I) -> Result<DatasetStats>
where
    I: IntoIterator<Item = &'a GrayImage>,
{
    let mut count = 0usize;
    let mut sum = 0.0f64;
    let mut sumsq = 0.0f64;
    for img in images {
        match &img.pixels {
            Pixels::Real(r) => {
                for &v in r {
                    let v = v as f64;
                    sum += v;
                    sumsq += v * v;
                }
            }
            Pixels::Byte(b) => {
                for &v in b {
                    let v = v as f64 / 255.0;
                    sum += v;
                    sumsq += v * v;
                }
            }
        }
        count += img.len();
    }
    if count == 0 {
        return Err(Error::Usage("dataset_stats: no pixels".into()));
    }
    let mean = sum / count as f64;
    let var = (sumsq / count as f64 - mean * mean).max(0.0);
    Ok(DatasetStats { mean, std: var.sqrt() })
}

/// Z-score normalization: pixel' = (pixel - mean) / std, std floored to 1
/// below 1e-8. Output is in real form.
pub fn zscore_normalize(image: &GrayImage, stats: &DatasetStats) -> GrayImage {
    let std = stats.effective_std() as f32;
    let mean = stats.mean as f32;
    let data: Vec<f32> = image.real_pixels().iter().map(|&v| (v - mean) / std).collect();
    GrayImage { width: image.width, height: image.height, pixels: Pixels::Real(data) }
}

/// Zero every pixel outside the mask; inside pixels are unchanged. Works in
/// whichever form the image is in.
pub fn apply_mask(image: &GrayImage, mask: &BinaryMask) -> Result<GrayImage> {
    if image.width != mask.width || image.height != mask.height {
        return Err(Error::Shape {
            op: "apply_mask",
            detail: format!(
                "image {}x{} vs mask {}x{}",
                image.width, image.height, mask.width, mask.height
            ),
        });
    }
    let pixels = match &image.pixels {
        Pixels::Byte(b) => Pixels::Byte(
            b.iter().zip(&mask.bits).map(|(&v, &m)| if m { v } else { 0 }).collect(),
        ),
        Pixels::Real(r) => Pixels::Real(
            r.iter().zip(&mask.bits).map(|(&v, &m)| if m { v } else { 0.0 }).collect(),
        ),
    };
    Ok(GrayImage { width: image.width, height: image.height, pixels })
}
