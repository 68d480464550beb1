//! Seeded synthetic chest-image generator with known lung masks.
//!
//! Each sample is a noisy background with soft out-of-lung clutter blotches
//! (the stand-in for shoulders, bones and markers), two bright lung ellipses
//! (their union is the ground-truth mask), and for the TB class one to three
//! Gaussian bright blobs centered inside the mask. An optional spurious cue -
//! a 4x4 bright square in a random image corner, always outside the lungs -
//! can be placed on TB training images only, or on TB at train time and on
//! normal images at test time ("flipped"), which is what makes whole-image
//! classifiers fail honestly: the clutter and the cue are visible to them
//! but are masked away from segmented-input classifiers.

use std::fmt;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{write_pgm, BinaryMask, Class, GrayImage, Pixels};
use crate::rng::{mix64, SplitMix64};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpuriousCue {
    None,
    /// Cue on TB images in the train part; absent at test.
    TrainOnly,
    /// Cue on TB images at train, on normal images at test.
    FlippedAtTest,
}

impl SpuriousCue {
    pub fn parse(s: &str) -> Result<SpuriousCue> {
        match s {
            "none" => Ok(SpuriousCue::None),
            "train_only" => Ok(SpuriousCue::TrainOnly),
            "flipped_at_test" => Ok(SpuriousCue::FlippedAtTest),
            other => Err(Error::Config(format!(
                "unknown spurious cue {other:?}; expected none, train_only or flipped_at_test"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SpuriousCue::None => "none",
            SpuriousCue::TrainOnly => "train_only",
            SpuriousCue::FlippedAtTest => "flipped_at_test",
        }
    }
}

/// Which partition a sample is generated for; only affects cue placement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// (height, width), default 64x64.
    pub image_size: (usize, usize),
    /// Samples per class in the train part.
    pub n_per_class: usize,
    /// Samples per class in the test part; 0 writes a flat single-part tree.
    pub n_test_per_class: usize,
    pub lesion_count_range: (usize, usize),
    pub lesion_intensity: f64,
    pub noise_std: f64,
    pub spurious_cue: SpuriousCue,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            image_size: (64, 64),
            n_per_class: 100,
            n_test_per_class: 0,
            lesion_count_range: (1, 3),
            lesion_intensity: 0.40,
            noise_std: 0.03,
            spurious_cue: SpuriousCue::None,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.image_size;
        if h < 32 || w < 32 {
            return Err(Error::Config(format!(
                "image size {h}x{w} too small; lungs need at least 32x32"
            )));
        }
        if self.n_per_class == 0 {
            return Err(Error::Config("n_per_class must be positive".into()));
        }
        if self.lesion_count_range.0 < 1 || self.lesion_count_range.0 > self.lesion_count_range.1
        {
            return Err(Error::Config(format!(
                "bad lesion count range {:?}",
                self.lesion_count_range
            )));
        }
        if !(0.0..=1.0).contains(&self.lesion_intensity) || !(0.0..=0.5).contains(&self.noise_std)
        {
            return Err(Error::Config("lesion intensity/noise out of range".into()));
        }
        Ok(())
    }
}

/// Metadata row of one generated sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub id: String,
    pub class: Class,
    pub part: Part,
    /// Corner index 0..4 (tl, tr, bl, br) or none.
    pub cue_corner: Option<usize>,
    pub lesion_count: usize,
    pub sample_seed: u64,
}

impl fmt::Display for Part {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Part::Train => "train",
            Part::Test => "test",
        })
    }
}

const BACKGROUND: f64 = 0.08;
const LUNG_LEVEL: f64 = 0.30;
const CUE_SIZE: usize = 4;
/// Lung bounding boxes keep this many pixels clear of every border so the
/// corner cue can never touch the mask.
const LUNG_MARGIN: usize = 8;

struct Ellipse {
    cx: f64,
    cy: f64,
    ax: f64,
    ay: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let dx = (x - self.cx) / self.ax;
        let dy = (y - self.cy) / self.ay;
        dx * dx + dy * dy <= 1.0
    }
}

fn sample_seed(seed: u64, class: Class, index: usize) -> u64 {
    mix64(seed ^ mix64(0xC1A5_5000 + class.index() as u64) ^ mix64(index as u64))
}

/// Add a clamped Gaussian bump of the given peak at (cx, cy). With
/// `keep_out`, pixels inside that mask are left untouched (clutter never
/// crosses the lung boundary).
fn stamp_gaussian(
    pixels: &mut [f32],
    w: usize,
    h: usize,
    cx: f64,
    cy: f64,
    sigma: f64,
    peak: f64,
    keep_out: Option<&BinaryMask>,
) {
    let radius = (3.0 * sigma).ceil() as isize;
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let (x, y) = (cx as isize + dx, cy as isize + dy);
            if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
                continue;
            }
            let idx = y as usize * w + x as usize;
            if keep_out.is_some_and(|m| m.bits[idx]) {
                continue;
            }
            let r2 = (dx * dx + dy * dy) as f64;
            let bump = peak * (-r2 / (2.0 * sigma * sigma)).exp();
            pixels[idx] = (pixels[idx] as f64 + bump).clamp(0.0, 1.0) as f32;
        }
    }
}

/// Generate one sample, fully determined by (config.seed, class, index).
/// Train/test membership is by index: indices below `n_per_class` belong to
/// the train part.
pub fn gen_sample(
    config: &SynthConfig,
    class: Class,
    index: usize,
) -> (GrayImage, BinaryMask, ManifestRow) {
    let (h, w) = config.image_size;
    let part = if index < config.n_per_class { Part::Train } else { Part::Test };
    let seed = sample_seed(config.seed, class, index);
    let mut rng = SplitMix64::new(seed);

    // two lungs, bounded away from every border by LUNG_MARGIN
    let mut lungs = Vec::with_capacity(2);
    for side in 0..2 {
        let ax = rng.uniform(0.10, 0.16) * w as f64;
        let ay = rng.uniform(0.26, 0.34) * h as f64;
        let cx_lo = if side == 0 { 0.26 * w as f64 } else { 0.62 * w as f64 };
        let cx = rng.uniform(cx_lo, cx_lo + 0.10 * w as f64);
        let cy = rng.uniform(0.45 * h as f64, 0.55 * h as f64);
        let cx = cx.clamp(LUNG_MARGIN as f64 + ax + 1.0, (w - LUNG_MARGIN) as f64 - ax - 1.0);
        let cy = cy.clamp(LUNG_MARGIN as f64 + ay + 1.0, (h - LUNG_MARGIN) as f64 - ay - 1.0);
        lungs.push(Ellipse { cx, cy, ax, ay });
    }

    let mut bits = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            if lungs.iter().any(|e| e.contains(x as f64, y as f64)) {
                bits[y * w + x] = true;
            }
        }
    }
    let mask = BinaryMask { width: w, height: h, bits };

    // base intensity + noise
    let mut pixels = vec![0.0f32; w * h];
    for (i, p) in pixels.iter_mut().enumerate() {
        let base = if mask.bits[i] { LUNG_LEVEL } else { BACKGROUND };
        *p = (base + config.noise_std * rng.gauss()).clamp(0.0, 1.0) as f32;
    }

    // label-independent clutter: soft bright blotches centered outside the
    // lungs, in both classes
    let clutter_count = 3 + rng.below(4);
    for _ in 0..clutter_count {
        let (cx, cy) = loop {
            let x = rng.below(w);
            let y = rng.below(h);
            if !mask.bits[y * w + x] {
                break (x as f64, y as f64);
            }
        };
        let sigma = rng.uniform(3.0, 7.0);
        let peak = rng.uniform(0.15, 0.45);
        stamp_gaussian(&mut pixels, w, h, cx, cy, sigma, peak, Some(&mask));
    }

    // TB lesions: bright Gaussian blobs centered inside the mask
    let mut lesion_count = 0usize;
    if class == Class::Tb {
        let (lo, hi) = config.lesion_count_range;
        lesion_count = lo + rng.below(hi - lo + 1);
        for _ in 0..lesion_count {
            // rejection-sample a center strictly inside the mask
            let (cx, cy) = loop {
                let x = rng.below(w);
                let y = rng.below(h);
                if mask.bits[y * w + x] {
                    break (x as f64, y as f64);
                }
            };
            let sigma = rng.uniform(2.5, 4.5);
            let peak = config.lesion_intensity * rng.uniform(0.8, 1.2);
            stamp_gaussian(&mut pixels, w, h, cx, cy, sigma, peak, None);
        }
    }

    // spurious cue, always outside the lungs
    let cue_on = match (config.spurious_cue, part, class) {
        (SpuriousCue::None, _, _) => false,
        (SpuriousCue::TrainOnly, Part::Train, Class::Tb) => true,
        (SpuriousCue::TrainOnly, _, _) => false,
        (SpuriousCue::FlippedAtTest, Part::Train, Class::Tb) => true,
        (SpuriousCue::FlippedAtTest, Part::Test, Class::Normal) => true,
        (SpuriousCue::FlippedAtTest, _, _) => false,
    };
    let cue_corner = cue_on.then(|| rng.below(4));
    if let Some(corner) = cue_corner {
        let (x0, y0) = match corner {
            0 => (1, 1),
            1 => (w - 1 - CUE_SIZE, 1),
            2 => (1, h - 1 - CUE_SIZE),
            _ => (w - 1 - CUE_SIZE, h - 1 - CUE_SIZE),
        };
        for y in y0..y0 + CUE_SIZE {
            for x in x0..x0 + CUE_SIZE {
                debug_assert!(!mask.bits[y * w + x], "cue must stay outside the lung mask");
                pixels[y * w + x] = 1.0;
            }
        }
    }

    let image = GrayImage { width: w, height: h, pixels: Pixels::Real(pixels) }.to_bytes();
    let row = ManifestRow {
        id: format!("{}_{index:04}", class.name()),
        class,
        part,
        cue_corner,
        lesion_count,
        sample_seed: seed,
    };
    (image, mask, row)
}

fn write_part(
    config: &SynthConfig,
    root: &Path,
    indices: std::ops::Range<usize>,
    rows: &mut Vec<ManifestRow>,
) -> Result<()> {
    for sub in ["images", "masks", "normal", "tb"] {
        fs::create_dir_all(root.join(sub)).map_err(|e| Error::io(root, e))?;
    }
    for class in [Class::Normal, Class::Tb] {
        for index in indices.clone() {
            let (image, mask, row) = gen_sample(config, class, index);
            let file = format!("{}.pgm", row.id);
            write_pgm(&image, &root.join("images").join(&file))?;
            write_pgm(&mask.to_image(), &root.join("masks").join(&file))?;
            write_pgm(&image, &root.join(class.name()).join(&file))?;
            rows.push(row);
        }
    }
    Ok(())
}

/// Write the dataset under `out_root` in both layouts (segmentation
/// `images/`+`masks/` and classification `normal/`+`tb/`), plus a manifest
/// CSV. With `n_test_per_class > 0` the tree splits into `train/` and
/// `test/` subtrees (cue semantics differ between parts); otherwise the
/// layout is flat.
pub fn gen_dataset(config: &SynthConfig, out_root: &Path) -> Result<Vec<ManifestRow>> {
    config.validate()?;
    fs::create_dir_all(out_root).map_err(|e| Error::io(out_root, e))?;
    let mut rows = Vec::new();
    if config.n_test_per_class == 0 {
        write_part(config, out_root, 0..config.n_per_class, &mut rows)?;
    } else {
        write_part(config, &out_root.join("train"), 0..config.n_per_class, &mut rows)?;
        write_part(
            config,
            &out_root.join("test"),
            config.n_per_class..config.n_per_class + config.n_test_per_class,
            &mut rows,
        )?;
    }

    let mut manifest = String::from("id,class,part,cue_corner,lesion_count,seed\n");
    for row in &rows {
        manifest.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.id,
            row.class.name(),
            row.part,
            row.cue_corner.map(|c| c.to_string()).unwrap_or_else(|| "none".into()),
            row.lesion_count,
            row.sample_seed
        ));
    }
    let manifest_path = out_root.join("manifest.csv");
    fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(rows)
}
