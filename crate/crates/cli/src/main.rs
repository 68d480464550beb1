//! Chest X-ray screening pipeline: synthetic data, lung-field segmentation,
//! segmentation-gated TB classification, Score-CAM audits.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pulmo_cli::commands;
use pulmo_cli::commands::cam::CamOptions;
use pulmo_cli::settings::Settings;
use pulmo_cli::CmdResult;
use pulmo_core::synth::{SpuriousCue, SynthConfig};

#[derive(Parser)]
#[command(name = "pulmo", version, about = "Lung segmentation + TB classification pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by the training/inference commands. Every flag overrides the
/// matching key of `--config` (flags win).
#[derive(Args, Debug, Default)]
struct CommonArgs {
    /// Flat key=value config file applied before the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset root directory.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory for checkpoints, CSVs and images.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Model family: unet | modified_unet | plain_cnn | resnet_mini | densenet_mini.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    input_size: Option<usize>,
    #[arg(long)]
    base_channels: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    k_folds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Mask threshold for segmentation outputs.
    #[arg(long)]
    threshold: Option<f64>,
    /// Trained checkpoint (segment-apply, cam).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with ground-truth lung masks.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        n_per_class: usize,
        /// Samples per class in a separate test part (0 = flat layout).
        #[arg(long, default_value_t = 0)]
        n_test_per_class: usize,
        #[arg(long, default_value_t = 64)]
        image_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// none | train_only | flipped_at_test
        #[arg(long, default_value = "none")]
        spurious_cue: String,
        #[arg(long, default_value_t = 0.40)]
        lesion_intensity: f64,
        #[arg(long, default_value_t = 0.03)]
        noise_std: f64,
    },
    /// Train U-Net folds on a segmentation-layout dataset.
    SegmentTrain {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Apply a trained U-Net to a classification tree, writing the segmented
    /// mirror tree plus predicted masks.
    SegmentApply {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train classifier folds on whole or segmented images.
    Classify {
        #[command(flatten)]
        common: CommonArgs,
        /// whole | segmented
        #[arg(long)]
        input: Option<String>,
        /// 'auto' or a fixed number of augmented copies per minority image.
        #[arg(long)]
        augment_copies: Option<String>,
    },
    /// Score-CAM overlays and localization scores for a trained classifier.
    Cam {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        input: Option<String>,
        /// Conv layer id to visualize (defaults to the last conv layer).
        #[arg(long)]
        layer: Option<String>,
        /// Comma-separated sample ids (default: first --count per class).
        #[arg(long)]
        ids: Option<String>,
        #[arg(long, default_value_t = 8)]
        count: usize,
        /// Only emit CAMs for misclassified samples.
        #[arg(long)]
        misclassified_only: bool,
        /// Compute in-mask localization scores (requires masks).
        #[arg(long)]
        localization: bool,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
    },
    /// Consolidate and verify a run directory.
    Report {
        /// Run directory produced by segment-train or classify.
        #[arg(long)]
        run: PathBuf,
    },
}

fn build_settings(common: &CommonArgs, task: &str) -> CmdResult<Settings> {
    let mut settings = Settings { task: task.to_string(), ..Settings::default() };
    if let Some(path) = &common.config {
        settings.apply_file(path)?;
        settings.task = task.to_string();
    }
    if let Some(v) = &common.data {
        settings.data_root = v.clone();
    }
    if let Some(v) = &common.out {
        settings.output_dir = v.clone();
    }
    if let Some(v) = &common.model {
        settings.model = v.clone();
    }
    if let Some(v) = common.input_size {
        settings.input_size = v;
    }
    if let Some(v) = common.base_channels {
        settings.base_channels = v;
    }
    if let Some(v) = common.depth {
        settings.depth = v;
    }
    if let Some(v) = common.epochs {
        settings.epochs = v;
    }
    if let Some(v) = common.batch_size {
        settings.batch_size = v;
    }
    if let Some(v) = common.lr {
        settings.lr = v;
    }
    if let Some(v) = common.momentum {
        settings.momentum = v;
    }
    if let Some(v) = common.dropout {
        settings.dropout = v;
    }
    if let Some(v) = common.patience {
        settings.patience = v;
    }
    if let Some(v) = common.k_folds {
        settings.k_folds = v;
    }
    if let Some(v) = common.seed {
        settings.seed = v;
    }
    if let Some(v) = common.threshold {
        settings.threshold = v;
    }
    if let Some(v) = &common.checkpoint {
        settings.segmentation_checkpoint = Some(v.clone());
    }
    Ok(settings)
}

fn dispatch(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Synth {
            out,
            n_per_class,
            n_test_per_class,
            image_size,
            seed,
            spurious_cue,
            lesion_intensity,
            noise_std,
        } => {
            let config = SynthConfig {
                image_size: (image_size, image_size),
                n_per_class,
                n_test_per_class,
                lesion_intensity,
                noise_std,
                spurious_cue: SpuriousCue::parse(&spurious_cue)?,
                seed,
                ..SynthConfig::default()
            };
            commands::synth::run(&config, &out)
        }
        Command::SegmentTrain { common } => {
            let mut settings = build_settings(&common, "segmentation")?;
            if common.model.is_none() && settings.model.is_empty() {
                settings.model = "unet".into();
            }
            commands::segment_train::run(&settings)
        }
        Command::SegmentApply { common } => {
            let settings = build_settings(&common, "segmentation")?;
            commands::segment_apply::run(&settings)
        }
        Command::Classify { common, input, augment_copies } => {
            let mut settings = build_settings(&common, "classification")?;
            if common.model.is_none() && settings.model == "unet" {
                settings.model = "plain_cnn".into();
            }
            if let Some(v) = input {
                settings.input = v;
            }
            if let Some(v) = augment_copies {
                settings.augment_copies = v;
            }
            commands::classify::run(&settings)
        }
        Command::Cam {
            common,
            input,
            layer,
            ids,
            count,
            misclassified_only,
            localization,
            alpha,
        } => {
            let mut settings = build_settings(&common, "classification")?;
            if common.model.is_none() && settings.model == "unet" {
                settings.model = "plain_cnn".into();
            }
            if let Some(v) = input {
                settings.input = v;
            }
            if let Some(v) = layer {
                settings.cam_layer = Some(v);
            }
            let options = CamOptions {
                ids: ids
                    .map(|s| s.split(',').map(|p| p.trim().to_string()).collect())
                    .unwrap_or_default(),
                count,
                misclassified_only,
                localization,
                alpha,
            };
            commands::cam::run(&settings, &options)
        }
        Command::Report { run } => commands::report::run(&run),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message);
            ExitCode::from(err.code as u8)
        }
    }
}
