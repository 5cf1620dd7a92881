#![allow(dead_code)]

use std::path::{Path, PathBuf};

use readkit::squad::{SquadAnswer, SquadArticle, SquadFile, SquadParagraph, SquadQa};
use readkit::trainer::{TrainConfig, Trainer};
use readkit_core::models::{Model, ModelConfig, ModelKind};
use readkit_core::optim::OptimizerConfig;
use readkit_core::preprocess::{
    build_feature_vocab, extract_features, CoarseTagger, EmbeddingMatrix, Side, VocabBuilder, Vocabulary,
    FEATURE_TAGS,
};
use readkit_core::synthetic;
use readkit_core::text::DataInstance;

/// The synthetic corpus in official SQuAD layout.
pub fn synthetic_squad(n_questions: usize, seed: u64) -> SquadFile {
    let paragraphs = synthetic::paragraphs(n_questions, seed)
        .into_iter()
        .map(|p| SquadParagraph {
            context: p.context,
            qas: p
                .qas
                .into_iter()
                .map(|qa| SquadQa {
                    question: qa.question,
                    id: qa.qid,
                    answers: vec![SquadAnswer {
                        text: qa.answer.text,
                        answer_start: qa.answer.answer_start,
                    }],
                    is_impossible: None,
                })
                .collect(),
        })
        .collect();
    SquadFile {
        version: Some("1.1".into()),
        data: vec![SquadArticle {
            title: "synthetic".into(),
            paragraphs,
        }],
    }
}

pub fn write_json(path: &Path, value: &impl serde::Serialize) -> PathBuf {
    std::fs::write(path, serde_json::to_vec(value).unwrap()).unwrap();
    path.to_path_buf()
}

pub struct Toy {
    pub instances: Vec<DataInstance>,
    pub vocab: Vocabulary,
    pub tags: Vocabulary,
    pub vectors: EmbeddingMatrix<f32>,
}

pub fn toy(n: usize, seed: u64) -> Toy {
    let mut instances = synthetic::instances(n, seed).unwrap();
    for i in &mut instances {
        extract_features(i, Side::Context, Some(&CoarseTagger));
    }
    let vocab = VocabBuilder::default().build(&instances).unwrap();
    let tags = build_feature_vocab(&instances, FEATURE_TAGS).unwrap();
    let vectors = EmbeddingMatrix::random(&vocab, 16, 1);
    Toy {
        instances,
        vocab,
        tags,
        vectors,
    }
}

pub fn small_config(kind: ModelKind) -> ModelConfig {
    ModelConfig {
        model: kind,
        hidden_size: 16,
        dropout: 0.0,
        rnn_layers: 2,
        optimizer: OptimizerConfig {
            learning_rate: 0.01,
            ..OptimizerConfig::default()
        },
        ..ModelConfig::default()
    }
}

pub fn trainer(toy: &Toy, kind: ModelKind, train: TrainConfig, save_dir: Option<PathBuf>) -> Trainer<f32> {
    let cfg = small_config(kind);
    let mut model = Model::new(cfg.clone(), toy.vectors.matrix.clone(), toy.tags.len(), train.seed).unwrap();
    model.compile(cfg.optimizer).unwrap();
    Trainer::new(model, toy.vocab.clone(), Some(toy.tags.clone()), toy.vectors.dim, train, save_dir).unwrap()
}
