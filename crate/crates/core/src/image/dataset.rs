//! Dataset directory ingestion.
//!
//! Two layouts:
//! - segmentation: `<root>/images/*.pgm` paired with `<root>/masks/<same>.pgm`
//! - classification: `<root>/normal/*.pgm` and `<root>/tb/*.pgm`, with an
//!   optional `<root>/masks/<same>.pgm` tree carrying per-image lung masks
//!   (present in segmented trees written by the pipeline).

use std::fs;
use std::path::Path;

use crate::augment::TransformSpec;
use crate::error::{Error, Result};

use super::pnm::read_pgm;
use super::{BinaryMask, GrayImage};

/// Classification label. `Tb` is the positive class throughout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Class {
    Normal,
    Tb,
}

impl Class {
    pub fn index(self) -> usize {
        match self {
            Class::Normal => 0,
            Class::Tb => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Class::Normal => "normal",
            Class::Tb => "tb",
        }
    }
}

/// One labeled image, optionally paired with a ground-truth mask.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub image: GrayImage,
    pub mask: Option<BinaryMask>,
    pub label: Option<Class>,
    /// True for samples created by augmentation; such samples are barred
    /// from validation and test partitions.
    pub augmented: bool,
    /// The transform that produced an augmented sample.
    pub transform: Option<TransformSpec>,
}

impl Sample {
    pub fn new(id: impl Into<String>, image: GrayImage) -> Sample {
        Sample {
            id: id.into(),
            image,
            mask: None,
            label: None,
            augmented: false,
            transform: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetLayout {
    Segmentation,
    Classification,
}

/// An ordered collection of samples.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sample indices of one class.
    pub fn class_indices(&self, class: Class) -> Vec<usize> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.label == Some(class))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Lexicographically sorted `.pgm` file stems of a directory.
fn pgm_stems(dir: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) == Some("pgm") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push(stem.to_string());
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Load a dataset directory in the given layout. File ordering is
/// deterministic (lexicographic by file stem; classification lists `normal`
/// before `tb`).
pub fn load_dataset(root: &Path, layout: DatasetLayout) -> Result<Dataset> {
    match layout {
        DatasetLayout::Segmentation => load_segmentation(root),
        DatasetLayout::Classification => load_classification(root),
    }
}

fn load_segmentation(root: &Path) -> Result<Dataset> {
    let images_dir = root.join("images");
    let masks_dir = root.join("masks");
    let image_stems = pgm_stems(&images_dir)?;
    let mask_stems = pgm_stems(&masks_dir)?;
    if image_stems.is_empty() {
        return Err(Error::Usage(format!("no .pgm images under {}", images_dir.display())));
    }

    let mut orphans: Vec<String> = Vec::new();
    for stem in &image_stems {
        if mask_stems.binary_search(stem).is_err() {
            orphans.push(format!("image without mask: {stem}.pgm"));
        }
    }
    for stem in &mask_stems {
        if image_stems.binary_search(stem).is_err() {
            orphans.push(format!("mask without image: {stem}.pgm"));
        }
    }
    if !orphans.is_empty() {
        return Err(Error::Manifest(orphans));
    }

    let mut samples = Vec::with_capacity(image_stems.len());
    for stem in &image_stems {
        let image = read_pgm(&images_dir.join(format!("{stem}.pgm")))?;
        let mask_img = read_pgm(&masks_dir.join(format!("{stem}.pgm")))?;
        if mask_img.width != image.width || mask_img.height != image.height {
            return Err(Error::Manifest(vec![format!(
                "mask extent mismatch for {stem}: image {}x{}, mask {}x{}",
                image.width, image.height, mask_img.width, mask_img.height
            )]));
        }
        let mut sample = Sample::new(stem.clone(), image);
        sample.mask = Some(BinaryMask::from_image(&mask_img));
        samples.push(sample);
    }
    Ok(Dataset { samples })
}

fn load_classification(root: &Path) -> Result<Dataset> {
    let masks_dir = root.join("masks");
    let have_masks = masks_dir.is_dir();
    let mut samples = Vec::new();
    for class in [Class::Normal, Class::Tb] {
        let dir = root.join(class.name());
        let stems = pgm_stems(&dir)?;
        if stems.is_empty() {
            return Err(Error::Usage(format!("empty class folder {}", dir.display())));
        }
        for stem in &stems {
            let image = read_pgm(&dir.join(format!("{stem}.pgm")))?;
            let mut sample = Sample::new(stem.clone(), image);
            sample.label = Some(class);
            if have_masks {
                let mask_path = masks_dir.join(format!("{stem}.pgm"));
                if mask_path.is_file() {
                    sample.mask = Some(BinaryMask::from_image(&read_pgm(&mask_path)?));
                }
            }
            samples.push(sample);
        }
    }
    Ok(Dataset { samples })
}
