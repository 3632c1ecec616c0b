//! Plain-text corpora: byte-level tokens by default, or word tokens from a
//! vocabulary file with one entry per line.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::dist::TokenId;
use crate::error::{invalid, Result};

pub const UNKNOWN: &str = "<unk>";

#[derive(Debug, Clone)]
pub enum Tokenizer {
    Bytes,
    Words {
        words: Vec<String>,
        index: HashMap<String, TokenId>,
    },
}

impl Tokenizer {
    pub fn from_vocab_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_words(text.lines().map(str::trim).filter(|l| !l.is_empty()))
    }

    pub fn from_words<'a>(words: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut list = Vec::new();
        let mut index = HashMap::new();
        for w in words {
            if index.contains_key(w) {
                return Err(invalid(format!("duplicate vocabulary entry {w:?}")));
            }
            index.insert(w.to_string(), TokenId(list.len() as u32));
            list.push(w.to_string());
        }
        if list.is_empty() {
            return Err(invalid("empty vocabulary"));
        }
        Ok(Tokenizer::Words { words: list, index })
    }

    pub fn vocab_size(&self) -> usize {
        match self {
            Tokenizer::Bytes => 256,
            Tokenizer::Words { words, .. } => words.len(),
        }
    }

    /// Word mode maps out-of-vocabulary words to `<unk>` when the vocabulary
    /// has it, and fails otherwise.
    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        match self {
            Tokenizer::Bytes => Ok(text.bytes().map(|b| TokenId(u32::from(b))).collect()),
            Tokenizer::Words { index, .. } => text
                .split_whitespace()
                .map(|w| {
                    index
                        .get(w)
                        .or_else(|| index.get(UNKNOWN))
                        .copied()
                        .ok_or_else(|| invalid(format!("word {w:?} not in vocabulary")))
                })
                .collect(),
        }
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        match self {
            Tokenizer::Bytes => {
                let bytes: Vec<u8> = ids.iter().map(|t| t.0 as u8).collect();
                String::from_utf8_lossy(&bytes).into_owned()
            }
            Tokenizer::Words { words, .. } => ids
                .iter()
                .map(|t| words.get(t.index()).map(String::as_str).unwrap_or(UNKNOWN))
                .collect::<Vec<_>>()
                .join(" "),
        }
    }
}

/// Reads and tokenizes a UTF-8 corpus file.
pub fn load_corpus(path: &Path, tokenizer: &Tokenizer) -> Result<Vec<TokenId>> {
    let text = fs::read_to_string(path)?;
    tokenizer.encode(&text)
}
