use std::collections::HashMap;

use crate::dist::{Distribution, TokenId};
use crate::error::{invalid, Result};
use crate::models::DraftLm;

/// Count-based n-gram model with add-k smoothing applied at query time.
///
/// Contexts shorter than `order - 1` tokens, or never seen in the corpus, use
/// the unigram distribution.
#[derive(Debug, Clone)]
pub struct NgramLm {
    order: usize,
    vocab_size: usize,
    add_k: f64,
    counts: HashMap<Vec<TokenId>, HashMap<TokenId, u64>>,
    unigram: Vec<u64>,
}

/// Counts every sliding window of length `n` in `corpus`.
pub fn fit_ngram(corpus: &[TokenId], n: usize, add_k: f64, vocab_size: usize) -> Result<NgramLm> {
    if corpus.is_empty() {
        return Err(invalid("empty corpus"));
    }
    if n < 1 {
        return Err(invalid("n-gram order must be at least 1"));
    }
    if corpus.len() < n {
        return Err(invalid(format!(
            "corpus of {} tokens is shorter than order {n}",
            corpus.len()
        )));
    }
    if !(add_k >= 0.0) {
        return Err(invalid("add_k must be non-negative"));
    }
    if let Some(t) = corpus.iter().find(|t| t.index() >= vocab_size) {
        return Err(invalid(format!("token {t} outside vocabulary of {vocab_size}")));
    }
    let mut unigram = vec![0u64; vocab_size];
    for t in corpus {
        unigram[t.index()] += 1;
    }
    let mut counts: HashMap<Vec<TokenId>, HashMap<TokenId, u64>> = HashMap::new();
    if n > 1 {
        for w in corpus.windows(n) {
            *counts
                .entry(w[..n - 1].to_vec())
                .or_default()
                .entry(w[n - 1])
                .or_default() += 1;
        }
    }
    Ok(NgramLm {
        order: n,
        vocab_size,
        add_k,
        counts,
        unigram,
    })
}

impl NgramLm {
    pub fn order(&self) -> usize {
        self.order
    }

    /// Raw count of `token` following `context` (the last `order - 1` tokens).
    pub fn count(&self, context: &[TokenId], token: TokenId) -> u64 {
        if self.order == 1 {
            return self.unigram[token.index()];
        }
        self.counts
            .get(context)
            .and_then(|m| m.get(&token))
            .copied()
            .unwrap_or(0)
    }

    pub fn unigram_dist(&self) -> Distribution {
        let weights = self
            .unigram
            .iter()
            .map(|c| *c as f64 + self.add_k)
            .collect();
        Distribution::from_weights(weights).expect("corpus is non-empty")
    }

    fn smoothed(&self, row: &HashMap<TokenId, u64>) -> Distribution {
        let mut weights = vec![self.add_k; self.vocab_size];
        for (t, c) in row {
            weights[t.index()] += *c as f64;
        }
        Distribution::from_weights(weights).expect("seen context has counts")
    }
}

impl DraftLm for NgramLm {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_dist(&self, ctx: &[TokenId]) -> Distribution {
        let need = self.order - 1;
        if need == 0 || ctx.len() < need {
            return self.unigram_dist();
        }
        match self.counts.get(&ctx[ctx.len() - need..]) {
            Some(row) => self.smoothed(row),
            None => self.unigram_dist(),
        }
    }
}
