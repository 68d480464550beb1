//! `pulmo segment-apply`: run a trained U-Net over a classification-layout
//! tree and write the mirrored segmented tree (plus predicted masks).

use std::fs;
use std::path::Path;

use pulmo_core::error::{Error, Result};
use pulmo_core::image::{
    apply_mask, load_dataset, resize_bilinear, write_pgm, zscore_normalize, DatasetLayout,
};
use pulmo_core::nn::{predict_mask, Model, Task};
use pulmo_core::tensor::Tensor;

use crate::experiment::{read_stats, stats_sidecar};
use crate::settings::Settings;
use crate::CmdResult;

pub fn run(settings: &Settings) -> CmdResult {
    let config = settings.model_config()?;
    if config.task != Task::Segmentation {
        return Err(Error::Config(format!(
            "segment-apply needs a segmentation family, got {}",
            settings.model
        ))
        .into());
    }
    let ckpt = settings
        .segmentation_checkpoint
        .as_ref()
        .ok_or_else(|| Error::Config("segment-apply requires segmentation_checkpoint".into()))?;
    if !ckpt.is_file() {
        return Err(Error::Config(format!("checkpoint {} does not exist", ckpt.display())).into());
    }

    let model: Model<f32> = Model::build(&config, 0)?;
    model.load(ckpt)?;
    let stats = read_stats(&stats_sidecar(ckpt))?;

    let dataset = load_dataset(&settings.data_root, DatasetLayout::Classification)?;
    let out = &settings.output_dir;
    for sub in ["normal", "tb", "masks"] {
        fs::create_dir_all(out.join(sub)).map_err(|e| Error::io(out, e))?;
    }
    settings.echo_into(out)?;

    let size = settings.input_size;
    let mut written = 0usize;
    for sample in &dataset.samples {
        let resized = resize_bilinear(&sample.image, size, size)?;
        let normalized = zscore_normalize(&resized, &stats);
        let input =
            Tensor::<f32>::from_vec(&[1, 1, size, size], normalized.real_pixels())?;
        let mask = predict_mask(&model, &input, settings.threshold)?;
        let segmented = apply_mask(&resized, &mask)?;

        let class_dir = sample.label.expect("classification layout has labels").name();
        let file = format!("{}.pgm", sample.id);
        write_pgm(&segmented.to_bytes(), &out.join(class_dir).join(&file))?;
        write_pgm(&mask.to_image(), &out.join("masks").join(&file))?;
        written += 1;
    }
    println!(
        "segment-apply: wrote {written} segmented images (+masks) under {}",
        out.display()
    );
    Ok(())
}

/// Check that an output tree mirrors its input tree file for file.
pub fn trees_mirror(input_root: &Path, output_root: &Path) -> Result<bool> {
    for sub in ["normal", "tb"] {
        let list = |root: &Path| -> Result<Vec<String>> {
            let mut names = Vec::new();
            let dir = root.join(sub);
            for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
                let entry = entry.map_err(|e| Error::io(&dir, e))?;
                names.push(entry.file_name().to_string_lossy().into_owned());
            }
            names.sort();
            Ok(names)
        };
        if list(input_root)? != list(output_root)? {
            return Ok(false);
        }
    }
    Ok(true)
}
