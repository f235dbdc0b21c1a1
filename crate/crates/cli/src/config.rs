use std::path::{Path, PathBuf};

use fcbfuse::data::AugmentConfig;
use fcbfuse::model::{Architecture, ModelConfig};
use fcbfuse::train::{AdamWConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::exit::{CliError, CliResult};

pub const THREADS_ENV: &str = "FCBFUSE_THREADS";

/// A preset name or a complete architecture description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSpec {
    Preset(String),
    Explicit(ModelConfig),
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::Preset("toy-64".into())
    }
}

/// How the dataset is divided for training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    /// Seeded 80/10/10 split.
    #[default]
    Seeded,
    /// Every sample is used for both training and validation.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub architecture: Option<Architecture>,
    pub input_size: Option<(usize, usize)>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub split: SplitMode,
    /// Existing manifest to reuse instead of splitting.
    pub split_manifest: Option<PathBuf>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub augment: bool,
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        RunConfig {
            model: ModelSpec::default(),
            architecture: None,
            input_size: None,
            data: None,
            out: None,
            seed: None,
            split: SplitMode::default(),
            split_manifest: None,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.optimizer.lr,
            weight_decay: t.optimizer.weight_decay,
            augment: true,
            threads: None,
        }
    }
}

/// Everything a training run needs, validated.
#[derive(Debug, Clone)]
pub struct ResolvedRun {
    pub model: ModelConfig,
    pub data: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    pub split: SplitMode,
    pub split_manifest: Option<PathBuf>,
    pub train: TrainConfig,
    pub threads: usize,
}

pub fn read_config(path: &Path) -> CliResult<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::config(format!("config {}: {e}", path.display())))
}

/// `--threads`, then the environment, then 1.
pub fn resolve_threads(flag: Option<usize>) -> CliResult<usize> {
    let threads = match flag {
        Some(t) => t,
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| CliError::config(format!("{THREADS_ENV}=`{v}` is not a positive integer")))?,
            Err(_) => 1,
        },
    };
    if threads == 0 {
        return Err(CliError::config("thread count must be at least 1"));
    }
    Ok(threads)
}

impl RunConfig {
    pub fn model_config(&self) -> CliResult<ModelConfig> {
        let mut cfg = match &self.model {
            ModelSpec::Preset(name) => ModelConfig::preset(name)?,
            ModelSpec::Explicit(cfg) => cfg.clone(),
        };
        if let Some(a) = self.architecture {
            cfg = cfg.with_architecture(a);
        }
        if let Some((h, w)) = self.input_size {
            cfg = cfg.with_input_hw(h, w);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// The same run with every default made explicit.
    pub fn fully_resolved(&self) -> CliResult<RunConfig> {
        let model = self.model_config()?;
        Ok(RunConfig {
            model: ModelSpec::Explicit(model),
            architecture: None,
            input_size: None,
            threads: Some(resolve_threads(self.threads)?),
            ..self.clone()
        })
    }

    pub fn resolve(&self) -> CliResult<ResolvedRun> {
        let model = self.model_config()?;
        let seed = self.seed.ok_or_else(|| CliError::config("a seed is required (config `seed` or --seed)"))?;
        let data = self.data.clone().ok_or_else(|| CliError::config("a data root is required (config `data` or --data)"))?;
        let out = self.out.clone().ok_or_else(|| CliError::config("an output directory is required (config `out` or --out)"))?;
        if !data.is_dir() {
            return Err(CliError::data(format!("data root {} does not exist", data.display())));
        }
        if let Some(m) = &self.split_manifest {
            if !m.is_file() {
                return Err(CliError::data(format!("split manifest {} does not exist", m.display())));
            }
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(CliError::config("epochs and batch size must be positive"));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(CliError::config("lr must be positive and weight decay non-negative"));
        }
        let train = TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            optimizer: AdamWConfig { lr: self.lr, weight_decay: self.weight_decay, ..AdamWConfig::default() },
            seed,
            augment: self.augment.then(AugmentConfig::default),
        };
        Ok(ResolvedRun {
            model,
            data,
            out,
            seed,
            split: self.split,
            split_manifest: self.split_manifest.clone(),
            train,
            threads: resolve_threads(self.threads)?,
        })
    }
}
