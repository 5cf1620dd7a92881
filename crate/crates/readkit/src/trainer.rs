//! The training loop: epochs over shuffled batches, EMA, periodic dev
//! evaluation with early stopping, summaries and checkpoints.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::{error, info};
use readkit_core::batch::{epoch_seed, make_batches, BatchConfig};
use readkit_core::eval::{evaluate, EvalResult, PredictionSet};
use readkit_core::models::Model;
use readkit_core::nn::Mode;
use readkit_core::preprocess::Vocabulary;
use readkit_core::text::DataInstance;
use readkit_core::train::{EmaShadow, TrainState};
use readkit_core::{Scalar, Tensor};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{config_hash, Checkpoint, CheckpointMeta, TensorEntry, TensorRole};
use crate::error::{Error, Result};
use crate::prefetch::with_prefetch;

pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const SUMMARY_FILE: &str = "summary.jsonl";

/// Keeps dropout streams apart from the batch-order stream.
const DROPOUT_SALT: u64 = 0x6472_6f70_6f75_7421;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: u64,
    pub batch_size: usize,
    /// Evaluate on dev after every `eval_every` epochs.
    pub eval_every: u64,
    /// Stop after this many evaluations without improvement; 0 disables.
    pub patience: u32,
    pub ema_decay: f64,
    pub seed: u64,
    pub bucket: bool,
    /// Batches built ahead of the training loop; 0 disables the producer
    /// thread.
    pub prefetch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            eval_every: 1,
            patience: 3,
            ema_decay: readkit_core::train::DEFAULT_EMA_DECAY,
            seed: 0,
            bucket: false,
            prefetch: 2,
        }
    }
}

/// One line of the training summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryEvent {
    pub step: u64,
    pub epoch: u64,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
    pub em: Option<f64>,
    pub f1: Option<f64>,
}

pub struct Trainer<S: Scalar> {
    pub model: Model<S>,
    pub ema: EmaShadow<S>,
    pub state: TrainState,
    pub config: TrainConfig,
    pub vocab: Vocabulary,
    pub tags: Option<Vocabulary>,
    pub save_dir: Option<PathBuf>,
    embedding_dim: usize,
}

impl<S: Scalar> Trainer<S> {
    /// `model` must already be compiled.
    pub fn new(
        model: Model<S>,
        vocab: Vocabulary,
        tags: Option<Vocabulary>,
        embedding_dim: usize,
        config: TrainConfig,
        save_dir: Option<PathBuf>,
    ) -> Result<Self> {
        if model.optimizer().is_none() {
            return Err(Error::Config("trainer needs a compiled model".into()));
        }
        if config.batch_size == 0 || config.eval_every == 0 {
            return Err(Error::Config("batch_size and eval_every must be positive".into()));
        }
        let ema = EmaShadow::new(config.ema_decay, &model.store)?;
        if let Some(dir) = &save_dir {
            std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
        }
        Ok(Self {
            model,
            ema,
            state: TrainState::new(config.seed),
            config,
            vocab,
            tags,
            save_dir,
            embedding_dim,
        })
    }

    pub fn config_hash(&self) -> String {
        config_hash(
            &self.model.config,
            self.vocab.len(),
            self.tags.as_ref().map_or(0, Vocabulary::len),
            self.embedding_dim,
        )
    }

    fn batch_config(&self, shuffle: bool) -> BatchConfig {
        BatchConfig {
            batch_size: self.config.batch_size,
            shuffle,
            seed: self.config.seed,
            bucket: shuffle && self.config.bucket,
            min_lengths: (0, 0),
        }
    }

    /// Predictions of the current (live) weights.
    pub fn predict(&self, instances: &[DataInstance]) -> Result<PredictionSet> {
        predict(&self.model, instances, &self.vocab, self.tags.as_ref(), self.config.batch_size)
    }

    /// Scores `instances` with the averaged weights; the live weights are
    /// restored bit for bit afterwards.
    pub fn evaluate(&mut self, instances: &[DataInstance]) -> Result<(EvalResult, PredictionSet)> {
        let before: Vec<Vec<u64>> = self.model.store.values().iter().map(bits).collect();
        self.ema.swap(&mut self.model.store);
        let preds = self.predict(instances);
        self.ema.swap(&mut self.model.store);
        let after: Vec<Vec<u64>> = self.model.store.values().iter().map(bits).collect();
        if before != after {
            return Err(Error::Config("evaluation altered the training weights".into()));
        }
        let preds = preds?;
        Ok((evaluate(instances, &preds), preds))
    }

    /// Runs epochs `state.epoch..config.epochs`. Every training instance
    /// must carry a gold span.
    pub fn train_and_evaluate(&mut self, train: &[DataInstance], dev: &[DataInstance]) -> Result<TrainState> {
        if train.iter().any(|i| i.span().is_none()) {
            return Err(Error::Config("training instances must all have answer spans".into()));
        }
        let batch_cfg = self.batch_config(true);
        while self.state.epoch < self.config.epochs {
            let epoch = self.state.epoch;
            let (loss, lr, grad_norm) = self.run_epoch(train, &batch_cfg, epoch)?;
            self.state.epoch += 1;
            let mut event = SummaryEvent {
                step: self.state.global_step,
                epoch: self.state.epoch,
                loss,
                lr,
                grad_norm,
                em: None,
                f1: None,
            };
            let mut stop = false;
            if self.state.epoch.is_multiple_of(self.config.eval_every) {
                let (result, _) = self.evaluate(dev)?;
                let obs = self.state.observe(result.f1, result.exact_match, self.config.patience);
                info!(
                    "epoch {} step {} loss {:.4} dev em {:.2} f1 {:.2}{}",
                    self.state.epoch,
                    self.state.global_step,
                    loss,
                    result.exact_match,
                    result.f1,
                    if obs.improved { " (best)" } else { "" }
                );
                event.em = Some(result.exact_match);
                event.f1 = Some(result.f1);
                if obs.improved {
                    self.save(BEST_CHECKPOINT)?;
                }
                stop = obs.stop;
            } else {
                info!("epoch {} step {} loss {:.4}", self.state.epoch, self.state.global_step, loss);
            }
            self.append_summary(&event)?;
            self.save(LAST_CHECKPOINT)?;
            if stop {
                info!("early stop after {} evaluations without improvement", self.state.bad_evals);
                break;
            }
        }
        Ok(self.state.clone())
    }

    /// Returns mean loss, last learning rate and mean gradient norm.
    fn run_epoch(&mut self, train: &[DataInstance], cfg: &BatchConfig, epoch: u64) -> Result<(f64, f64, f64)> {
        let batches = make_batches::<S>(train, &self.vocab, self.tags.as_ref(), cfg, epoch);
        let seed = self.config.seed;
        let (model, ema, state) = (&mut self.model, &mut self.ema, &mut self.state);
        let save_dir = self.save_dir.as_deref();
        with_prefetch(batches, self.config.prefetch, |batches| {
            let (mut loss_sum, mut norm_sum, mut lr, mut n) = (0.0, 0.0, 0.0, 0u64);
            for batch in batches {
                let step_seed = epoch_seed(seed ^ DROPOUT_SALT, state.global_step);
                let stats = match model.train_step(&batch, step_seed) {
                    Ok(s) => s,
                    Err(e @ readkit_core::Error::NonFinite { .. }) => {
                        error!("numeric abort: {e}");
                        if let Some(dir) = save_dir {
                            write_abort_dump(dir, &e, epoch);
                        }
                        return Err(e.into());
                    }
                    Err(e) => return Err(e.into()),
                };
                ema.update(&model.store);
                state.global_step += 1;
                loss_sum += stats.loss;
                norm_sum += stats.grad_norm;
                lr = stats.lr;
                n += 1;
            }
            let n = n.max(1) as f64;
            Ok((loss_sum / n, lr, norm_sum / n))
        })
    }

    fn append_summary(&self, event: &SummaryEvent) -> Result<()> {
        let Some(dir) = &self.save_dir else {
            return Ok(());
        };
        let path = dir.join(SUMMARY_FILE);
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(Error::io(&path))?;
        let mut line = serde_json::to_string(event).map_err(|e| Error::data(&path, e))?;
        line.push('\n');
        f.write_all(line.as_bytes()).map_err(Error::io(&path))
    }

    /// Parameters, optimizer slots, EMA shadow and train state.
    pub fn checkpoint(&self) -> Checkpoint<S> {
        let mut entries = Vec::new();
        let mut tensors = Vec::new();
        let mut push = |name: String, role, t: &Tensor<S>| {
            entries.push(TensorEntry {
                name,
                role,
                shape: t.shape().to_vec(),
                dtype: S::DTYPE,
            });
            tensors.push(t.clone());
        };
        for (_, p) in self.model.store.iter() {
            push(p.name.clone(), TensorRole::Param, &p.value);
        }
        let opt = self.model.optimizer().expect("compiled");
        for ((_, p), slots) in self.model.store.iter().zip(opt.slots()) {
            for (k, t) in slots.iter().enumerate() {
                push(format!("{}#{k}", p.name), TensorRole::OptimizerSlot, t);
            }
        }
        for ((_, p), s) in self.model.store.iter().zip(self.ema.tensors()) {
            if let Some(t) = s {
                push(p.name.clone(), TensorRole::Ema, t);
            }
        }
        Checkpoint {
            meta: CheckpointMeta {
                config_hash: self.config_hash(),
                model_config: self.model.config.clone(),
                vocab_size: self.vocab.len(),
                tag_vocab_size: self.tags.as_ref().map_or(0, Vocabulary::len),
                embedding_dim: self.embedding_dim,
                train_state: self.state.clone(),
                optimizer_steps: opt.steps(),
                tensors: entries,
            },
            tensors,
        }
    }

    fn save(&self, name: &str) -> Result<()> {
        match &self.save_dir {
            Some(dir) => self.checkpoint().save(&dir.join(name)),
            None => Ok(()),
        }
    }

    /// Restores everything [`Trainer::checkpoint`] stored.
    pub fn resume(&mut self, path: &Path) -> Result<()> {
        let ckpt = Checkpoint::<S>::load(path)?;
        ckpt.check_hash(&self.config_hash(), path)?;
        let bad = |detail: String| Error::Checkpoint {
            path: path.to_path_buf(),
            detail,
        };
        self.model.store.set_values(restore_params(&self.model, &ckpt, path)?)?;

        let mut slots: Vec<Vec<Tensor<S>>> = vec![Vec::new(); self.model.store.len()];
        let names: Vec<String> = self.model.store.iter().map(|(_, p)| p.name.clone()).collect();
        for (e, t) in ckpt.with_role(TensorRole::OptimizerSlot) {
            let (name, _) = e.name.rsplit_once('#').ok_or_else(|| bad(format!("bad slot name {}", e.name)))?;
            let i = names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| bad(format!("slot for unknown parameter {name}")))?;
            slots[i].push(t.clone());
        }
        self.model
            .optimizer_mut()
            .expect("compiled")
            .restore(ckpt.meta.optimizer_steps, slots)?;

        let mut shadow: Vec<Option<Tensor<S>>> = vec![None; names.len()];
        for (e, t) in ckpt.with_role(TensorRole::Ema) {
            let i = names
                .iter()
                .position(|n| *n == e.name)
                .ok_or_else(|| bad(format!("ema for unknown parameter {}", e.name)))?;
            shadow[i] = Some(t.clone());
        }
        self.ema.restore(shadow)?;
        self.state = ckpt.meta.train_state.clone();
        Ok(())
    }
}

/// Parameter tensors of `ckpt` in the model's declaration order.
pub fn restore_params<S: Scalar>(model: &Model<S>, ckpt: &Checkpoint<S>, path: &Path) -> Result<Vec<Tensor<S>>> {
    let stored: Vec<_> = ckpt.with_role(TensorRole::Param).collect();
    let names: Vec<&str> = model.store.iter().map(|(_, p)| p.name.as_str()).collect();
    if stored.len() != names.len() || stored.iter().zip(&names).any(|((e, _), n)| e.name != *n) {
        return Err(Error::Checkpoint {
            path: path.to_path_buf(),
            detail: "parameter names differ from the model".into(),
        });
    }
    Ok(stored.into_iter().map(|(_, t)| t.clone()).collect())
}

/// Rebuilds a model from a checkpoint, with the averaged weights loaded
/// when the checkpoint has them.
pub fn model_from_checkpoint<S: Scalar>(ckpt: &Checkpoint<S>, path: &Path) -> Result<Model<S>> {
    let m = &ckpt.meta;
    let words = Tensor::zeros(vec![m.vocab_size, m.embedding_dim]);
    let mut model = Model::new(m.model_config.clone(), words, m.tag_vocab_size, 0)?;
    let mut values = restore_params(&model, ckpt, path)?;
    for (e, t) in ckpt.with_role(TensorRole::Ema) {
        if let Some(i) = model.store.find(&e.name) {
            values[i.0] = t.clone();
        }
    }
    model.store.set_values(values)?;
    Ok(model)
}

pub fn predict<S: Scalar>(
    model: &Model<S>,
    instances: &[DataInstance],
    vocab: &Vocabulary,
    tags: Option<&Vocabulary>,
    batch_size: usize,
) -> Result<PredictionSet> {
    let cfg = BatchConfig {
        batch_size,
        shuffle: false,
        seed: 0,
        bucket: false,
        min_lengths: (0, 0),
    };
    let mut preds = PredictionSet::new();
    for batch in make_batches::<S>(instances, vocab, tags, &cfg, 0) {
        let out = model.forward(&batch, Mode::Eval, 0)?;
        preds.extend(model.get_best_answer(&out, &batch));
    }
    Ok(preds)
}

fn bits<S: Scalar>(t: &Tensor<S>) -> Vec<u64> {
    t.data().iter().map(|v| v.as_f64().to_bits()).collect()
}

fn write_abort_dump(dir: &Path, e: &readkit_core::Error, epoch: u64) {
    if let readkit_core::Error::NonFinite {
        step,
        loss,
        lr,
        grad_norm,
    } = e
    {
        let dump = serde_json::json!({
            "epoch": epoch,
            "step": step,
            "loss": loss.to_string(),
            "lr": lr,
            "grad_norm": grad_norm.to_string(),
        });
        let _ = std::fs::write(dir.join("abort.json"), dump.to_string());
    }
}
