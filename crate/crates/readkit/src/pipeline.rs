//! The read, vocabulary, batch, train/evaluate/infer flow behind each
//! subcommand.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use readkit_core::eval::{evaluate, EvalResult, PredictionSet};
use readkit_core::models::{Model, ModelKind};
use readkit_core::preprocess::{
    build_feature_vocab, extract_features, CoarseTagger, EmbeddingMatrix, Side, VocabBuilder, Vocabulary, FEATURE_TAGS,
};
use readkit_core::text::DataInstance;
use readkit_core::train::TrainState;
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::files::{load_embeddings, load_vocab, save_vocab, write_atomic};
use crate::squad::read_squad;
use crate::trainer::{model_from_checkpoint, predict, Trainer, BEST_CHECKPOINT, LAST_CHECKPOINT};

/// Scalar type used by the command-line pipeline.
pub type Float = f32;

pub const VOCAB_FILE: &str = "vocab.json";
pub const TAGS_FILE: &str = "tags.json";
pub const CONFIG_ECHO: &str = "config.toml";

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Scores {
    pub exact_match: f64,
    pub f1: f64,
}

impl From<&EvalResult> for Scores {
    fn from(r: &EvalResult) -> Self {
        Self {
            exact_match: r.exact_match,
            f1: r.f1,
        }
    }
}

/// Reads a dataset and attaches token features.
pub fn load_dataset(path: &Path, config: &RunConfig) -> Result<Vec<DataInstance>> {
    let out = read_squad(path, config.squad_version)?;
    if out.skipped > 0 {
        warn!("{}: skipped {} questions", path.display(), out.skipped);
    }
    let mut instances = out.instances;
    for inst in &mut instances {
        extract_features(inst, Side::Context, Some(&CoarseTagger));
    }
    Ok(instances)
}

fn uses_tags(config: &RunConfig) -> bool {
    config.model == ModelKind::Drqa && config.use_tags
}

pub fn run_train(config: &RunConfig) -> Result<TrainState> {
    let train_path = config.existing_file("train_file", &config.train_file)?;
    let dev_path = config.existing_file("dev_file", &config.dev_file)?;
    let save_dir = config.required("save_dir", &config.save_dir)?;
    if let Some(p) = &config.embedding_file {
        if !p.is_file() {
            return Err(Error::Config(format!("embedding_file {} does not exist", p.display())));
        }
    }
    let model_config = config.model_config()?;
    let train_config = config.train_config();

    let mut train = load_dataset(&train_path, config)?;
    let dev = load_dataset(&dev_path, config)?;
    let before = train.len();
    train.retain(|i| i.span().is_some());
    if train.len() < before {
        info!("training on {} of {} questions (the rest have no answer span)", train.len(), before);
    }
    if train.is_empty() {
        return Err(Error::data(&train_path, "no trainable questions"));
    }

    let vocab = VocabBuilder {
        min_count: config.min_count,
        max_size: config.max_vocab,
        lowercase: config.lowercase,
        ..VocabBuilder::default()
    }
    .build(&train)?;
    let tags = if uses_tags(config) {
        Some(build_feature_vocab(&train, FEATURE_TAGS)?)
    } else {
        None
    };
    let embeddings: EmbeddingMatrix<Float> = match &config.embedding_file {
        Some(p) => load_embeddings(p, &vocab, config.seed)?,
        None => EmbeddingMatrix::random(&vocab, config.embedding_dim, config.seed),
    };
    let dim = embeddings.dim;

    fs::create_dir_all(&save_dir).map_err(Error::io(&save_dir))?;
    save_vocab(&save_dir.join(VOCAB_FILE), &vocab)?;
    if let Some(t) = &tags {
        save_vocab(&save_dir.join(TAGS_FILE), t)?;
    }
    write_atomic(&save_dir.join(CONFIG_ECHO), config.to_toml().as_bytes())?;

    let mut model = Model::<Float>::new(
        model_config.clone(),
        embeddings.matrix,
        tags.as_ref().map_or(0, Vocabulary::len),
        config.seed,
    )?;
    model.compile(model_config.optimizer)?;
    info!(
        "{:?}: {} parameters, vocabulary {}, {} train / {} dev questions",
        config.model,
        model.store.iter().map(|(_, p)| p.value.numel()).sum::<usize>(),
        vocab.len(),
        train.len(),
        dev.len()
    );
    let mut trainer = Trainer::new(model, vocab, tags, dim, train_config, Some(save_dir.clone()))?;
    let last = save_dir.join(LAST_CHECKPOINT);
    if config.resume && last.is_file() {
        trainer.resume(&last)?;
        info!("resumed from {} at epoch {}", last.display(), trainer.state.epoch);
    }
    trainer.train_and_evaluate(&train, &dev)
}

/// A trained model with its lookup tables, read from a save directory.
pub struct Loaded {
    pub model: Model<Float>,
    pub vocab: Vocabulary,
    pub tags: Option<Vocabulary>,
}

pub fn load_trained(save_dir: &Path) -> Result<Loaded> {
    let ckpt_path = save_dir.join(BEST_CHECKPOINT);
    if !ckpt_path.is_file() {
        return Err(Error::Config(format!("{} does not exist", ckpt_path.display())));
    }
    let ckpt = Checkpoint::<Float>::load(&ckpt_path)?;
    let vocab = load_vocab(&save_dir.join(VOCAB_FILE))?;
    let tags_path = save_dir.join(TAGS_FILE);
    let tags = if tags_path.is_file() {
        Some(load_vocab(&tags_path)?)
    } else {
        None
    };
    let m = &ckpt.meta;
    if m.vocab_size != vocab.len() || m.tag_vocab_size != tags.as_ref().map_or(0, Vocabulary::len) {
        return Err(Error::Checkpoint {
            path: ckpt_path,
            detail: "vocabulary files do not match the checkpoint".into(),
        });
    }
    let model = model_from_checkpoint(&ckpt, &ckpt_path)?;
    Ok(Loaded { model, vocab, tags })
}

fn predict_with(loaded: &Loaded, instances: &[DataInstance], config: &RunConfig) -> Result<PredictionSet> {
    predict(
        &loaded.model,
        instances,
        &loaded.vocab,
        loaded.tags.as_ref(),
        config.batch_size,
    )
}

pub fn write_predictions(path: &Path, preds: &PredictionSet) -> Result<()> {
    let json = serde_json::to_vec_pretty(preds).map_err(|e| Error::data(path, e))?;
    write_atomic(path, &json)
}

pub fn read_predictions(path: &Path) -> Result<PredictionSet> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    let map: BTreeMap<String, String> = serde_json::from_str(&text).map_err(|e| Error::data(path, e))?;
    Ok(map)
}

/// Scores a predictions file, or a trained model's predictions, against
/// the dev file.
pub fn run_evaluate(config: &RunConfig) -> Result<Scores> {
    let dev_path = config.existing_file("dev_file", &config.dev_file)?;
    let dev = load_dataset(&dev_path, config)?;
    let preds = match (&config.predictions, &config.save_dir) {
        (Some(p), _) => read_predictions(&config.existing_file("predictions", &Some(p.clone()))?)?,
        (None, Some(dir)) => {
            let loaded = load_trained(dir)?;
            let preds = predict_with(&loaded, &dev, config)?;
            if let Some(out) = &config.predictions_out {
                write_predictions(out, &preds)?;
            }
            preds
        }
        (None, None) => return Err(Error::Config("evaluate needs predictions or save_dir".into())),
    };
    let result = evaluate(&dev, &preds);
    if !result.missing.is_empty() {
        warn!("{} questions have no prediction (scored as wrong)", result.missing.len());
    }
    Ok(Scores::from(&result))
}

pub fn run_infer(config: &RunConfig) -> Result<PathBuf> {
    let input = config.existing_file("dev_file", &config.dev_file)?;
    let save_dir = config.required("save_dir", &config.save_dir)?;
    let out = config.required("predictions_out", &config.predictions_out)?;
    let loaded = load_trained(&save_dir)?;
    let instances = load_dataset(&input, config)?;
    let preds = predict_with(&loaded, &instances, config)?;
    write_predictions(&out, &preds)?;
    Ok(out)
}
