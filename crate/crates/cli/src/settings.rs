//! Pipeline configuration: a flat key=value file, overridden by CLI flags
//! (last writer wins), echoed into the output directory for provenance.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use pulmo_core::error::{Error, Result};
use pulmo_core::nn::{Family, ModelConfig, TrainSchedule};
use pulmo_core::tensor::optim::OptimizerConfig;

/// Every tunable of the training commands, with the defaults the commands
/// start from.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub task: String,
    pub data_root: PathBuf,
    pub output_dir: PathBuf,
    pub model: String,
    pub input_size: usize,
    pub input_channels: usize,
    pub base_channels: usize,
    pub depth: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub dropout: f64,
    pub patience: usize,
    pub k_folds: usize,
    pub seed: u64,
    pub segmentation_checkpoint: Option<PathBuf>,
    pub cam_layer: Option<String>,
    pub threshold: f64,
    /// whole | segmented (classification input kind)
    pub input: String,
    /// auto | integer copies per minority image
    pub augment_copies: String,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            task: String::new(),
            data_root: PathBuf::new(),
            output_dir: PathBuf::new(),
            model: "unet".into(),
            input_size: 64,
            input_channels: 1,
            base_channels: 8,
            depth: 3,
            epochs: 0, // resolved per task when left at 0
            batch_size: 32,
            lr: 1e-3,
            momentum: 0.9,
            dropout: 0.2,
            patience: 5,
            k_folds: 5,
            seed: 0,
            segmentation_checkpoint: None,
            cam_layer: None,
            threshold: 0.5,
            input: "whole".into(),
            augment_copies: "auto".into(),
        }
    }
}

impl Settings {
    /// Apply `key=value` lines from a config file. Unknown keys are
    /// rejected; '#' starts a comment.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "{}:{}: expected key=value, got {raw:?}",
                    path.display(),
                    lineno + 1
                )));
            };
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| {
                Error::Config(format!("config key {key}: cannot parse {value:?}"))
            })
        }
        match key {
            "task" => self.task = value.to_string(),
            "data_root" => self.data_root = PathBuf::from(value),
            "output_dir" => self.output_dir = PathBuf::from(value),
            "model" => self.model = value.to_string(),
            "input_size" => self.input_size = num(key, value)?,
            "input_channels" => self.input_channels = num(key, value)?,
            "base_channels" => self.base_channels = num(key, value)?,
            "depth" => self.depth = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "momentum" => self.momentum = num(key, value)?,
            "dropout" => self.dropout = num(key, value)?,
            "patience" => self.patience = num(key, value)?,
            "k_folds" => self.k_folds = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "segmentation_checkpoint" => {
                self.segmentation_checkpoint = Some(PathBuf::from(value))
            }
            "cam_layer" => self.cam_layer = Some(value.to_string()),
            "threshold" => self.threshold = num(key, value)?,
            "input" => self.input = value.to_string(),
            "augment_copies" => self.augment_copies = value.to_string(),
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// The model config this run trains or reloads.
    pub fn model_config(&self) -> Result<ModelConfig> {
        let family = Family::parse(&self.model)?;
        let mut config = ModelConfig::new(family);
        config.input_size = (self.input_size, self.input_size);
        config.input_channels = self.input_channels;
        config.base_channels = self.base_channels;
        config.depth = self.depth;
        config.dropout_rate = self.dropout;
        config.validate()?;
        Ok(config)
    }

    /// Schedule with per-task epoch defaults when `epochs` was left at 0.
    pub fn schedule(&self, task: pulmo_core::nn::Task, fold: usize) -> Result<TrainSchedule> {
        let mut schedule = TrainSchedule::for_task(task, self.seed + fold as u64);
        if self.epochs > 0 {
            schedule.max_epochs = self.epochs;
        }
        schedule.batch_size = self.batch_size;
        schedule.patience = self.patience.min(schedule.max_epochs);
        schedule.optimizer = OptimizerConfig { learning_rate: self.lr, momentum: self.momentum };
        schedule.validate()?;
        Ok(schedule)
    }

    /// Stable key=value rendering written as `config_resolved.txt`.
    pub fn render(&self) -> String {
        let mut map = BTreeMap::new();
        map.insert("task", self.task.clone());
        map.insert("data_root", self.data_root.display().to_string());
        map.insert("output_dir", self.output_dir.display().to_string());
        map.insert("model", self.model.clone());
        map.insert("input_size", self.input_size.to_string());
        map.insert("input_channels", self.input_channels.to_string());
        map.insert("base_channels", self.base_channels.to_string());
        map.insert("depth", self.depth.to_string());
        map.insert("epochs", self.epochs.to_string());
        map.insert("batch_size", self.batch_size.to_string());
        map.insert("lr", format!("{}", self.lr));
        map.insert("momentum", format!("{}", self.momentum));
        map.insert("dropout", format!("{}", self.dropout));
        map.insert("patience", self.patience.to_string());
        map.insert("k_folds", self.k_folds.to_string());
        map.insert("seed", self.seed.to_string());
        if let Some(ckpt) = &self.segmentation_checkpoint {
            map.insert("segmentation_checkpoint", ckpt.display().to_string());
        }
        if let Some(layer) = &self.cam_layer {
            map.insert("cam_layer", layer.clone());
        }
        map.insert("threshold", format!("{}", self.threshold));
        map.insert("input", self.input.clone());
        map.insert("augment_copies", self.augment_copies.clone());
        let mut out = String::new();
        for (k, v) in map {
            writeln!(out, "{k}={v}").expect("string write");
        }
        out
    }

    pub fn echo_into(&self, dir: &Path) -> Result<()> {
        let path = dir.join("config_resolved.txt");
        fs::write(&path, self.render()).map_err(|e| Error::io(&path, e))
    }
}
