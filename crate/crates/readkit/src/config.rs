//! Flat run configuration: a TOML file whose keys can each be overridden
//! by a command-line flag.

use std::fs;
use std::path::{Path, PathBuf};

use readkit_core::models::{ModelConfig, ModelKind};
use readkit_core::optim::{LrDecay, OptimizerConfig, OptimizerKind};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::squad::SquadVersion;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train_file: Option<PathBuf>,
    pub dev_file: Option<PathBuf>,
    pub embedding_file: Option<PathBuf>,
    pub save_dir: Option<PathBuf>,
    pub predictions_out: Option<PathBuf>,
    /// Predictions to score with `evaluate` instead of running a model.
    pub predictions: Option<PathBuf>,
    pub squad_version: SquadVersion,
    pub model: ModelKind,
    pub seed: u64,
    pub epochs: u64,
    pub batch_size: usize,
    pub eval_every: u64,
    pub patience: u32,
    pub ema_decay: f64,
    pub bucket: bool,
    pub prefetch: usize,
    pub resume: bool,
    pub hidden_size: usize,
    pub dropout: f64,
    pub max_answer_len: usize,
    /// Used when no embedding file is given.
    pub embedding_dim: usize,
    pub trainable_top_k: Option<usize>,
    pub highway_layers: usize,
    pub rnn_layers: usize,
    pub use_tf: bool,
    pub use_exact_match: bool,
    pub use_tags: bool,
    pub tag_dim: usize,
    pub lowercase: bool,
    pub min_count: usize,
    pub max_vocab: Option<usize>,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    /// Global gradient-norm bound; 0 disables clipping.
    pub clip_norm: f64,
    pub lr_decay_rate: Option<f64>,
    pub lr_decay_steps: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        let train = TrainConfig::default();
        let opt = OptimizerConfig::default();
        Self {
            train_file: None,
            dev_file: None,
            embedding_file: None,
            save_dir: None,
            predictions_out: None,
            predictions: None,
            squad_version: SquadVersion::V1,
            model: model.model,
            seed: train.seed,
            epochs: train.epochs,
            batch_size: train.batch_size,
            eval_every: train.eval_every,
            patience: train.patience,
            ema_decay: train.ema_decay,
            bucket: train.bucket,
            prefetch: train.prefetch,
            resume: false,
            hidden_size: model.hidden_size,
            dropout: model.dropout,
            max_answer_len: model.max_answer_len,
            embedding_dim: 100,
            trainable_top_k: model.trainable_top_k,
            highway_layers: model.highway_layers,
            rnn_layers: model.rnn_layers,
            use_tf: model.use_tf,
            use_exact_match: model.use_exact_match,
            use_tags: model.use_tags,
            tag_dim: model.tag_dim,
            lowercase: false,
            min_count: 1,
            max_vocab: None,
            optimizer: opt.name,
            learning_rate: opt.learning_rate,
            clip_norm: opt.clip_norm.unwrap_or(0.0),
            lr_decay_rate: None,
            lr_decay_steps: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn optimizer_config(&self) -> Result<OptimizerConfig> {
        let decay = match (self.lr_decay_rate, self.lr_decay_steps) {
            (Some(rate), Some(steps)) => Some(LrDecay {
                rate,
                steps,
                staircase: false,
            }),
            (None, None) => None,
            _ => return Err(Error::Config("lr_decay_rate and lr_decay_steps go together".into())),
        };
        let cfg = OptimizerConfig {
            name: self.optimizer,
            learning_rate: self.learning_rate,
            clip_norm: (self.clip_norm > 0.0).then_some(self.clip_norm),
            decay,
            ..OptimizerConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            model: self.model,
            hidden_size: self.hidden_size,
            dropout: self.dropout,
            max_answer_len: self.max_answer_len,
            trainable_top_k: self.trainable_top_k,
            highway_layers: self.highway_layers,
            rnn_layers: self.rnn_layers,
            use_tf: self.use_tf,
            use_exact_match: self.use_exact_match,
            use_tags: self.use_tags,
            tag_dim: self.tag_dim,
            optimizer: self.optimizer_config()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            eval_every: self.eval_every,
            patience: self.patience,
            ema_decay: self.ema_decay,
            seed: self.seed,
            bucket: self.bucket,
            prefetch: self.prefetch,
        }
    }

    /// The path stored under `key`, which must name an existing file.
    pub fn existing_file(&self, key: &str, value: &Option<PathBuf>) -> Result<PathBuf> {
        match value {
            None => Err(Error::Config(format!("{key} is required"))),
            Some(p) if !p.is_file() => Err(Error::Config(format!("{key} {} does not exist", p.display()))),
            Some(p) => Ok(p.clone()),
        }
    }

    pub fn required(&self, key: &str, value: &Option<PathBuf>) -> Result<PathBuf> {
        value.clone().ok_or_else(|| Error::Config(format!("{key} is required")))
    }
}
