//! Vocabulary and pretrained-embedding files, and atomic writes.

use std::fs;
use std::io::Write;
use std::path::Path;

use readkit_core::preprocess::{EmbeddingMatrix, Vocabulary};
use readkit_core::Scalar;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct VocabFile {
    lowercase: bool,
    tokens: Vec<String>,
    counts: Vec<usize>,
}

pub fn save_vocab(path: &Path, vocab: &Vocabulary) -> Result<()> {
    let file = VocabFile {
        lowercase: vocab.lowercase(),
        tokens: vocab.tokens().to_vec(),
        counts: (0..vocab.len()).map(|i| vocab.count(i)).collect(),
    };
    let json = serde_json::to_vec(&file).map_err(|e| Error::data(path, e))?;
    write_atomic(path, &json)
}

pub fn load_vocab(path: &Path) -> Result<Vocabulary> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    let file: VocabFile = serde_json::from_str(&text).map_err(|e| Error::data(path, e))?;
    Vocabulary::from_parts(file.tokens, file.counts, file.lowercase).map_err(|e| Error::data(path, e))
}

/// Reads a whitespace-separated text embedding file (GloVe or word2vec
/// text format). A missing file is a configuration error.
pub fn load_embeddings<S: Scalar>(path: &Path, vocab: &Vocabulary, seed: u64) -> Result<EmbeddingMatrix<S>> {
    if !path.is_file() {
        return Err(Error::Config(format!("embedding file {} does not exist", path.display())));
    }
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    let m = EmbeddingMatrix::from_lines(vocab, text.lines(), seed).map_err(|e| Error::data(path, e))?;
    log::info!(
        "{}: {} of {} vocabulary words found, {} duplicate lines ignored",
        path.display(),
        m.hit_count,
        vocab.len(),
        m.duplicate_count
    );
    Ok(m)
}

/// Writes to a sibling temporary file, syncs it, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp"));
    let mut f = fs::File::create(&tmp).map_err(Error::io(&tmp))?;
    f.write_all(bytes).map_err(Error::io(&tmp))?;
    f.sync_all().map_err(Error::io(&tmp))?;
    drop(f);
    fs::rename(&tmp, path).map_err(Error::io(path))
}
