//! Run configuration: a JSON file merged with command-line overrides.

use std::path::{Path, PathBuf};

use mcnet::data::Preprocess;
use mcnet::metrics::Task;
use mcnet::model::{ModelConfig, Strategy};
use mcnet::optim::AdamConfig;
use mcnet::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_samples: usize,
    pub side: usize,
    /// Label count including background.
    pub n_classes: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_samples: 16,
            side: 32,
            n_classes: 2,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Dataset directory; when absent, synthetic data is generated.
    pub root: Option<PathBuf>,
    pub synth: SynthSpec,
    pub preprocess: Preprocess,
    /// Train:test ratio.
    pub split: (usize, usize),
}

/// Everything a command needs; written back out as `config.json` by `train`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub optimizer: AdamConfig,
    pub epochs: u64,
    pub batch_size: usize,
    pub task: Task,
    pub data: DataConfig,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            optimizer: AdamConfig::default(),
            epochs: 400,
            batch_size: 4,
            task: Task::Binary,
            data: DataConfig {
                split: (3, 2),
                ..DataConfig::default()
            },
            seed: 0,
        }
    }
}

/// Flag-level overrides; `None` leaves the file value in place.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub synth: bool,
    pub data: Option<PathBuf>,
    pub depth: Option<usize>,
    pub width: Option<usize>,
    pub strategy: Option<Strategy>,
    pub epochs: Option<u64>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub n_samples: Option<usize>,
    pub side: Option<usize>,
    pub classes: Option<usize>,
    pub task: Option<Task>,
}

pub fn read_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => Error::MissingFile(p.to_path_buf()),
                _ => Error::Io(e),
            })?;
            Ok(serde_json::from_str(&text)?)
        }
    }
}

impl RunConfig {
    /// Applies flags over the file values. With `synthetic_data`, the model's
    /// input size and head follow the synthetic dataset settings.
    pub fn resolve(mut self, o: &Overrides, synthetic_data: bool) -> Result<Self> {
        if let Some(s) = o.seed {
            self.seed = s;
            self.model.seed = s;
        }
        if o.synth {
            self.data.root = None;
        }
        if let Some(d) = &o.data {
            self.data.root = Some(d.clone());
        }
        if let Some(v) = o.epochs {
            self.epochs = v;
        }
        if let Some(v) = o.lr {
            self.optimizer.lr = v;
        }
        if let Some(v) = o.batch_size {
            self.batch_size = v;
        }
        if let Some(v) = o.n_samples {
            self.data.synth.n_samples = v;
        }
        if let Some(v) = o.side {
            self.data.synth.side = v;
        }
        if let Some(v) = o.classes {
            self.data.synth.n_classes = v;
        }
        if let Some(t) = o.task {
            self.task = t;
        }
        if o.depth.is_some() || o.width.is_some() {
            let depth = o.depth.unwrap_or(self.model.depth);
            let base = match o.width {
                Some(w) => ModelConfig::scaled(depth, w, self.model.input_size)?,
                None => ModelConfig::published_depth(depth)?,
            };
            self.model = ModelConfig {
                depth: base.depth,
                encoder_widths: base.encoder_widths,
                integration_widths: base.integration_widths,
                decoder_widths: base.decoder_widths,
                ..self.model
            };
        }
        if let Some(s) = o.strategy {
            self.model = self.model.with_strategy(s);
        }
        if synthetic_data && self.data.root.is_none() {
            self.model.input_size = self.data.synth.side;
            self.model.in_channels = 1;
            self.model.n_classes = head_classes(self.data.synth.n_classes);
        }
        Ok(self)
    }
}

/// Output channels for a dataset with `labels` classes including background.
pub fn head_classes(labels: usize) -> usize {
    if labels <= 2 {
        1
    } else {
        labels
    }
}
