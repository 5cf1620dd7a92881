//! Checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! | bytes      | content                                   |
//! |------------|-------------------------------------------|
//! | 8          | magic `RKCKPT\0\n`                        |
//! | 4          | format version (u32)                      |
//! | 8          | metadata length `n` (u64)                 |
//! | n          | JSON [`CheckpointMeta`]                   |
//! | ...        | tensor payloads in metadata order         |
//! | 4          | CRC-32 of every preceding byte            |

use std::fs;
use std::path::Path;

use readkit_core::models::ModelConfig;
use readkit_core::train::TrainState;
use readkit_core::{DType, Scalar, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::files::write_atomic;

pub const MAGIC: &[u8; 8] = b"RKCKPT\0\n";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorRole {
    Param,
    OptimizerSlot,
    Ema,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub role: TensorRole,
    pub shape: Vec<usize>,
    pub dtype: DType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config_hash: String,
    pub model_config: ModelConfig,
    pub vocab_size: usize,
    pub tag_vocab_size: usize,
    pub embedding_dim: usize,
    pub train_state: TrainState,
    pub optimizer_steps: u64,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<S> {
    pub meta: CheckpointMeta,
    pub tensors: Vec<Tensor<S>>,
}

/// What a checkpoint must match to be loadable: the architecture and the
/// sizes of every lookup table. Optimizer settings are excluded so a run
/// can resume with a different schedule.
#[derive(Serialize)]
struct HashKey<'a> {
    config: &'a ModelConfig,
    vocab_size: usize,
    tag_vocab_size: usize,
    embedding_dim: usize,
}

pub fn config_hash(config: &ModelConfig, vocab_size: usize, tag_vocab_size: usize, embedding_dim: usize) -> String {
    let mut config = config.clone();
    config.optimizer = Default::default();
    config.dropout = 0.0;
    let key = HashKey {
        config: &config,
        vocab_size,
        tag_vocab_size,
        embedding_dim,
    };
    let json = serde_json::to_vec(&key).expect("config serializes");
    Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
}

impl<S: Scalar> Checkpoint<S> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta).map_err(|e| Error::Config(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        for t in &self.tensors {
            for &v in t.data() {
                v.to_le_bytes_vec(&mut out);
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |detail: String| Error::Checkpoint {
            path: path.to_path_buf(),
            detail,
        };
        let header = MAGIC.len() + 12;
        if bytes.len() < header + 4 {
            return Err(bad(format!("truncated: {} bytes", bytes.len())));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if &body[..MAGIC.len()] != MAGIC {
            return Err(bad("not a checkpoint (bad magic bytes)".into()));
        }
        let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(bad(format!("format version {version}, expected {FORMAT_VERSION}")));
        }
        if crc32fast::hash(body) != stored {
            return Err(bad("checksum mismatch (file corrupted or truncated)".into()));
        }
        let meta_len = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
        let meta_end = header
            .checked_add(meta_len)
            .filter(|&e| e <= body.len())
            .ok_or_else(|| bad("metadata length exceeds file".into()))?;
        let meta: CheckpointMeta =
            serde_json::from_slice(&body[header..meta_end]).map_err(|e| bad(format!("metadata: {e}")))?;
        let width = S::DTYPE.size_of();
        let mut pos = meta_end;
        let mut tensors = Vec::with_capacity(meta.tensors.len());
        for e in &meta.tensors {
            if e.dtype != S::DTYPE {
                return Err(bad(format!("tensor {} is {:?}, expected {:?}", e.name, e.dtype, S::DTYPE)));
            }
            let n: usize = e.shape.iter().product();
            let end = pos + n * width;
            if end > body.len() {
                return Err(bad(format!("payload of {} runs past the end", e.name)));
            }
            let data = body[pos..end].chunks_exact(width).map(S::from_le_slice).collect();
            tensors.push(Tensor::new(e.shape.clone(), data)?);
            pos = end;
        }
        if pos != body.len() {
            return Err(bad(format!("{} trailing payload bytes", body.len() - pos)));
        }
        Ok(Self { meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(Error::io(path))?;
        Self::from_bytes(&bytes, path)
    }

    /// Errors unless the stored hash equals `expected`, naming both.
    pub fn check_hash(&self, expected: &str, path: &Path) -> Result<()> {
        if self.meta.config_hash != expected {
            return Err(Error::Checkpoint {
                path: path.to_path_buf(),
                detail: format!(
                    "config hash mismatch: checkpoint {} vs current {}",
                    self.meta.config_hash, expected
                ),
            });
        }
        Ok(())
    }

    /// Tensors with the given role, in stored order.
    pub fn with_role(&self, role: TensorRole) -> impl Iterator<Item = (&TensorEntry, &Tensor<S>)> {
        self.meta
            .tensors
            .iter()
            .zip(&self.tensors)
            .filter(move |(e, _)| e.role == role)
    }
}
