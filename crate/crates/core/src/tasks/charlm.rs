//! Character-level language modelling on a small text corpus.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{Dataset, Inputs, Targets};
use crate::{Error, Result};

/// Sorted character alphabet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    chars: Vec<char>,
}

impl Vocab {
    pub fn from_text(text: &str) -> Self {
        let mut chars: Vec<char> = text.chars().collect();
        chars.sort_unstable();
        chars.dedup();
        Self { chars }
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn id(&self, c: char) -> Option<u8> {
        self.chars.binary_search(&c).ok().map(|i| i as u8)
    }

    pub fn char(&self, id: u8) -> Option<char> {
        self.chars.get(id as usize).copied()
    }

    pub fn decode(&self, ids: &[u8]) -> String {
        ids.iter().filter_map(|&i| self.char(i)).collect()
    }
}

/// A corpus split into a leading training part and a trailing validation part,
/// both encoded with the training vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct CharCorpus {
    pub vocab: Vocab,
    pub train: Vec<u8>,
    pub valid: Vec<u8>,
    pub seq_len: usize,
}

impl CharCorpus {
    /// Keeps the last `valid_fraction` of the characters for validation.
    /// Validation characters absent from the training split are dropped.
    pub fn from_text(text: &str, seq_len: usize, valid_fraction: f64) -> Result<Self> {
        if text.is_empty() {
            return Err(Error::Data("corpus is empty".into()));
        }
        if seq_len == 0 {
            return Err(Error::Config("sequence length must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&valid_fraction) {
            return Err(Error::Config(format!("validation fraction must be in [0, 1), got {valid_fraction}")));
        }
        let chars: Vec<char> = text.chars().collect();
        let cut = chars.len() - (chars.len() as f64 * valid_fraction) as usize;
        let (train_chars, valid_chars) = chars.split_at(cut);
        let train_text: String = train_chars.iter().collect();
        let vocab = Vocab::from_text(&train_text);
        if vocab.len() > u8::MAX as usize {
            return Err(Error::Data(format!("vocabulary of {} characters is too large", vocab.len())));
        }
        let train = train_chars.iter().filter_map(|&c| vocab.id(c)).collect();
        let valid = valid_chars.iter().filter_map(|&c| vocab.id(c)).collect();
        Ok(Self {
            vocab,
            train,
            valid,
            seq_len,
        })
    }

    /// Non-overlapping windows of `L + 1` ids: inputs are the first `L`, targets the last `L`.
    pub fn windows(&self, ids: &[u8]) -> Result<Dataset> {
        let l = self.seq_len;
        let n = ids.len() / (l + 1);
        if n == 0 {
            return Err(Error::Data(format!(
                "{} characters cannot fill one window of {}",
                ids.len(),
                l + 1
            )));
        }
        let mut inputs = Vec::with_capacity(n * l);
        let mut targets = Vec::with_capacity(n * l);
        for w in ids.chunks_exact(l + 1) {
            inputs.extend_from_slice(&w[..l]);
            targets.extend(w[1..].iter().map(|&c| c as u16));
        }
        Dataset::new(
            Inputs::Symbols {
                data: inputs,
                len: l,
                vocab: self.vocab.len(),
            },
            Targets::Classes {
                data: targets,
                per_sample: l,
                classes: self.vocab.len(),
            },
        )
    }

    pub fn train_dataset(&self) -> Result<Dataset> {
        self.windows(&self.train)
    }

    pub fn valid_dataset(&self) -> Result<Dataset> {
        self.windows(&self.valid)
    }
}
