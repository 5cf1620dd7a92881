use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::text::DataInstance;

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;

/// Token/index bijection. `<pad>` is always 0 and `<unk>` always 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
    counts: Vec<usize>,
    lowercase: bool,
}

impl Vocabulary {
    /// A vocabulary with exactly the given tokens after the two specials.
    /// Entries equal to a special, and repeats, are skipped.
    pub fn from_tokens<I, T>(tokens: I, lowercase: bool) -> Self
    where
        I: IntoIterator<Item = T>,
        T: AsRef<str>,
    {
        let mut v = Self::specials_only(lowercase);
        for t in tokens {
            v.push(t.as_ref(), 0);
        }
        v
    }

    /// Rebuilds a vocabulary from its stored token list and counts. The
    /// list must start with the two specials and contain no repeats.
    pub fn from_parts(tokens: Vec<String>, counts: Vec<usize>, lowercase: bool) -> Result<Self> {
        if tokens.len() != counts.len() {
            return Err(Error::Config(alloc::format!(
                "vocabulary has {} tokens but {} counts",
                tokens.len(),
                counts.len()
            )));
        }
        if tokens.first().map(String::as_str) != Some(PAD) || tokens.get(1).map(String::as_str) != Some(UNK) {
            return Err(Error::Config("vocabulary must start with <pad>, <unk>".into()));
        }
        let mut v = Self::specials_only(lowercase);
        v.counts = counts[..2].to_vec();
        for (t, &c) in tokens.iter().zip(&counts).skip(2) {
            if v.index.contains_key(t) {
                return Err(Error::Config(alloc::format!("vocabulary repeats {t:?}")));
            }
            v.push(t, c);
        }
        Ok(v)
    }

    fn specials_only(lowercase: bool) -> Self {
        let mut v = Self {
            tokens: Vec::new(),
            index: BTreeMap::new(),
            counts: Vec::new(),
            lowercase,
        };
        v.push(PAD, 0);
        v.push(UNK, 0);
        v
    }

    fn push(&mut self, token: &str, count: usize) {
        if self.index.contains_key(token) {
            return;
        }
        self.index.insert(token.to_string(), self.tokens.len());
        self.tokens.push(token.to_string());
        self.counts.push(count);
    }

    fn key<'a>(&self, token: &'a str) -> alloc::borrow::Cow<'a, str> {
        if self.lowercase {
            alloc::borrow::Cow::Owned(token.to_lowercase())
        } else {
            alloc::borrow::Cow::Borrowed(token)
        }
    }

    pub fn lookup(&self, token: &str) -> usize {
        self.index.get(self.key(token).as_ref()).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(self.key(token).as_ref())
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn count(&self, id: usize) -> usize {
        self.counts.get(id).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    pub fn index_map<T: AsRef<str>>(&self, tokens: &[T]) -> Vec<usize> {
        tokens.iter().map(|t| self.lookup(t.as_ref())).collect()
    }
}

#[derive(Debug, Clone)]
pub struct VocabBuilder {
    pub min_count: usize,
    /// Total size cap, specials included.
    pub max_size: Option<usize>,
    pub extra_tokens: Vec<String>,
    pub lowercase: bool,
}

impl Default for VocabBuilder {
    fn default() -> Self {
        Self {
            min_count: 1,
            max_size: None,
            extra_tokens: Vec::new(),
            lowercase: false,
        }
    }
}

impl VocabBuilder {
    /// Counts context and question tokens of every instance.
    pub fn build(&self, instances: &[DataInstance]) -> Result<Vocabulary> {
        self.build_from_tokens(instances.iter().flat_map(|inst| {
            inst.context_tokens
                .iter()
                .chain(&inst.question_tokens)
                .map(|t| t.text.as_str())
        }))
    }

    /// Character vocabulary over the same token stream.
    pub fn build_chars(&self, instances: &[DataInstance]) -> Result<Vocabulary> {
        let chars: Vec<String> = instances
            .iter()
            .flat_map(|inst| inst.context_tokens.iter().chain(&inst.question_tokens))
            .flat_map(|t| t.text.chars())
            .map(|c| c.to_string())
            .collect();
        self.build_from_tokens(chars.iter().map(String::as_str))
    }

    /// Keeps tokens seen at least `min_count` times, ranked by count
    /// (descending) then first occurrence.
    pub fn build_from_tokens<'a>(&self, stream: impl IntoIterator<Item = &'a str>) -> Result<Vocabulary> {
        let n_specials = 2 + self.extra_tokens.len();
        if let Some(max) = self.max_size {
            if max < n_specials {
                return Err(Error::Config(format!(
                    "max vocabulary size {max} is below the {n_specials} reserved tokens"
                )));
            }
        }
        let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
        for (pos, tok) in stream.into_iter().enumerate() {
            let key = if self.lowercase {
                tok.to_lowercase()
            } else {
                tok.to_string()
            };
            counts.entry(key).or_insert((0, pos)).0 += 1;
        }
        let mut ranked: Vec<(String, usize, usize)> = counts
            .into_iter()
            .filter(|(_, (c, _))| *c >= self.min_count)
            .map(|(t, (c, first))| (t, c, first))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));

        let mut vocab = Vocabulary::specials_only(self.lowercase);
        for t in &self.extra_tokens {
            vocab.push(t, 0);
        }
        let cap = self.max_size.unwrap_or(usize::MAX);
        for (t, c, _) in ranked {
            if vocab.len() >= cap {
                break;
            }
            vocab.push(&t, c);
        }
        Ok(vocab)
    }
}
