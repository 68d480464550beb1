//! Byte-exactness helpers for the acceptance suite.

use std::fs;
use std::path::Path;
use std::process::Command;

use pulmo_core::image::{decode_pgm, encode_checkpoint, save_checkpoint, write_pgm, GrayImage};
use pulmo_core::rng::SplitMix64;
use pulmo_core::synth::{gen_dataset, SynthConfig};
use pulmo_core::tensor::Tensor;

pub fn pulmo() -> &'static str {
    env!("CARGO_BIN_EXE_pulmo")
}

/// Value of `column` in the row whose first field is `row_label`.
pub fn read_csv_cell(path: &Path, row_label: &str, column: &str) -> f64 {
    let text = fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().expect("csv header").split(',').collect();
    let col = header
        .iter()
        .position(|h| *h == column)
        .unwrap_or_else(|| panic!("{}: no column {column}", path.display()));
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.first() == Some(&row_label) {
            return fields[col].parse().expect("numeric cell");
        }
    }
    panic!("{}: no row {row_label}", path.display());
}

/// All files under `root` as (relative path, bytes), sorted.
pub fn tree_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).expect("readable dir") {
            let path = entry.expect("dir entry").path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                files.push((rel, fs::read(&path).expect("readable file")));
            }
        }
    }
    files.sort();
    files
}

/// PGM, checkpoint and dataset-regeneration byte identity.
pub fn roundtrip_checks() {
    let dir = tempfile::tempdir().unwrap();

    // PGM write -> read -> write
    let mut rng = SplitMix64::new(5);
    let data: Vec<u8> = (0..35 * 17).map(|_| rng.below(256) as u8).collect();
    let img = GrayImage::from_bytes(35, 17, data).unwrap();
    let pgm = dir.path().join("img.pgm");
    write_pgm(&img, &pgm).unwrap();
    let first = fs::read(&pgm).unwrap();
    let back = decode_pgm(&first).unwrap();
    write_pgm(&back, &pgm).unwrap();
    assert_eq!(fs::read(&pgm).unwrap(), first, "PGM round trip must be bit-exact");

    // checkpoint save -> load -> save
    let tensors = vec![
        ("w".to_string(), Tensor::<f32>::from_vec(&[2, 3], vec![0.25; 6]).unwrap()),
        ("b".to_string(), Tensor::<f32>::from_vec(&[3], vec![-1.5, 0.0, 2.5]).unwrap()),
    ];
    let ckpt = dir.path().join("m.ckpt");
    save_checkpoint(&tensors, &ckpt).unwrap();
    let bytes_a = fs::read(&ckpt).unwrap();
    let fresh = vec![
        ("w".to_string(), Tensor::<f32>::zeros(&[2, 3])),
        ("b".to_string(), Tensor::<f32>::zeros(&[3])),
    ];
    pulmo_core::image::load_checkpoint(&ckpt, &fresh).unwrap();
    let bytes_b = encode_checkpoint(&fresh).unwrap();
    assert_eq!(bytes_a, bytes_b, "checkpoint round trip must be bit-exact");

    // full dataset regeneration
    let config = SynthConfig { n_per_class: 6, seed: 17, ..SynthConfig::default() };
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    gen_dataset(&config, &a).unwrap();
    gen_dataset(&config, &b).unwrap();
    assert_eq!(tree_bytes(&a), tree_bytes(&b), "dataset regeneration must be byte-identical");
}

fn run_chain(root: &Path) {
    fs::create_dir_all(root).unwrap();
    let run = |args: &[&str]| {
        let status = Command::new(pulmo())
            .args(args)
            .current_dir(root)
            .env("PULMO_THREADS", "1")
            .status()
            .expect("spawn pulmo");
        assert!(status.success(), "pulmo {args:?} failed");
    };
    run(&["synth", "--out", "data", "--n-per-class", "12", "--seed", "3"]);
    run(&[
        "segment-train", "--data", "data", "--out", "seg", "--model", "unet",
        "--input-size", "32", "--base-channels", "4", "--depth", "2",
        "--epochs", "2", "--batch-size", "8", "--k-folds", "2", "--seed", "1",
    ]);
    run(&[
        "segment-apply", "--data", "data", "--out", "segmented", "--model", "unet",
        "--input-size", "32", "--base-channels", "4", "--depth", "2",
        "--checkpoint", "seg/fold1.ckpt",
    ]);
    run(&[
        "classify", "--data", "segmented", "--out", "cls", "--model", "plain_cnn",
        "--input", "segmented", "--input-size", "32", "--base-channels", "4",
        "--depth", "2", "--epochs", "2", "--batch-size", "8", "--k-folds", "2",
        "--seed", "2",
    ]);
    run(&[
        "cam", "--data", "segmented", "--out", "cam", "--model", "plain_cnn",
        "--input", "segmented", "--input-size", "32", "--base-channels", "4",
        "--depth", "2", "--checkpoint", "cls/fold1.ckpt", "--count", "2",
        "--localization",
    ]);
    run(&["report", "--run", "seg"]);
    run(&["report", "--run", "cls"]);
}

/// The whole synth -> segment-train -> segment-apply -> classify -> cam ->
/// report chain, run twice from identical relative working directories, must
/// produce byte-identical trees on one thread.
pub fn full_pipeline_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("run_a");
    let b = dir.path().join("run_b");
    run_chain(&a);
    run_chain(&b);
    let ta = tree_bytes(&a);
    let tb = tree_bytes(&b);
    assert_eq!(
        ta.len(),
        tb.len(),
        "pipeline reruns produced different file sets"
    );
    for ((name_a, bytes_a), (name_b, bytes_b)) in ta.iter().zip(&tb) {
        assert_eq!(name_a, name_b);
        assert_eq!(bytes_a, bytes_b, "file {name_a} differs between reruns");
    }
}
