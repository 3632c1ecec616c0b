//! Speculative-streaming drafts.
//!
//! A streaming draft emits a main token plus up to `s` lookahead tokens per
//! internal step. Each lookahead slot survives the draft's own check with a
//! per-stream keep probability; the first dropped slot ends the emission.
//! Tokens are still sampled from the wrapped draft's conditionals, so
//! streaming changes how much internal work a window costs and nothing about
//! which tokens are proposed.

use std::sync::Arc;

use crate::dist::TokenId;
use crate::error::{invalid, Result};
use crate::models::DraftLm;
use crate::rng::{label, Rng};
use crate::sd::{Drafter, SpeculativeWindow, WindowSource};

/// Keep probability of every lookahead stream when none is configured.
pub const DEFAULT_KEEP_PROB: f64 = 0.7;
pub const DEFAULT_STREAMS: usize = 3;

#[derive(Clone)]
pub struct SsDraft {
    inner: Arc<dyn DraftLm>,
    keep_probs: Vec<f64>,
}

impl std::fmt::Debug for SsDraft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SsDraft")
            .field("keep_probs", &self.keep_probs)
            .finish_non_exhaustive()
    }
}

impl SsDraft {
    /// `streams` lookahead slots that each survive with `keep_prob`.
    pub fn new(inner: Arc<dyn DraftLm>, streams: usize, keep_prob: f64) -> Result<Self> {
        Self::with_profile(inner, vec![keep_prob; streams])
    }

    /// One keep probability per lookahead stream.
    pub fn with_profile(inner: Arc<dyn DraftLm>, keep_probs: Vec<f64>) -> Result<Self> {
        if keep_probs.is_empty() {
            return Err(invalid("speculative streaming needs at least one stream"));
        }
        if let Some(p) = keep_probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(invalid(format!("keep probability {p} outside [0, 1]")));
        }
        Ok(Self { inner, keep_probs })
    }

    pub fn streams(&self) -> usize {
        self.keep_probs.len()
    }

    pub fn keep_probs(&self) -> &[f64] {
        &self.keep_probs
    }

    pub fn inner(&self) -> &Arc<dyn DraftLm> {
        &self.inner
    }

    /// E[η] for an uncapped emission: 1 + p₁ + p₁p₂ + ….
    pub fn expected_eta(&self) -> f64 {
        let mut survive = 1.0;
        let mut total = 1.0;
        for p in &self.keep_probs {
            survive *= p;
            total += survive;
        }
        total
    }
}

/// Tokens emitted by one internal draft step.
#[derive(Debug, Clone, PartialEq)]
pub struct SsEmission {
    pub tokens: Vec<TokenId>,
}

impl SsEmission {
    /// η_j.
    pub fn eta(&self) -> usize {
        self.tokens.len()
    }
}

/// One internal step emitting at most `cap` tokens. Keep decisions come from
/// `keep_rng` and are drawn before the slot's token, so a dropped slot costs
/// `rng` nothing.
pub fn ss_emit(
    draft: &SsDraft,
    ctx: &[TokenId],
    cap: usize,
    temperature: f64,
    rng: &mut Rng,
    keep_rng: &mut Rng,
) -> SsEmission {
    let mut extended = ctx.to_vec();
    let mut tokens = Vec::with_capacity(1 + draft.streams());
    if cap == 0 {
        return SsEmission { tokens };
    }
    let main = draft.inner.next_dist(&extended).sample(temperature, rng);
    extended.push(main);
    tokens.push(main);
    for &p in &draft.keep_probs {
        if tokens.len() == cap || keep_rng.uniform() >= p {
            break;
        }
        let t = draft.inner.next_dist(&extended).sample(temperature, rng);
        extended.push(t);
        tokens.push(t);
    }
    SsEmission { tokens }
}

/// Fills a window of `gamma` tokens. The last emission is capped at what is
/// left of the window, so Σ η_j = γ and J = ⌈γ/η̄⌉ exactly.
pub fn ss_window(
    draft: &SsDraft,
    ctx: &[TokenId],
    gamma: usize,
    temperature: f64,
    rng: &mut Rng,
) -> SpeculativeWindow {
    let mut keep_rng = rng.child(label::KEEP);
    let mut extended = ctx.to_vec();
    let mut tokens = Vec::with_capacity(gamma);
    let mut steps = 0;
    while tokens.len() < gamma {
        let e = ss_emit(draft, &extended, gamma - tokens.len(), temperature, rng, &mut keep_rng);
        extended.extend_from_slice(&e.tokens);
        tokens.extend_from_slice(&e.tokens);
        steps += 1;
    }
    let eta_bar = if steps == 0 { 0.0 } else { gamma as f64 / steps as f64 };
    SpeculativeWindow {
        tokens,
        source: WindowSource::Fresh,
        draft_steps: steps,
        eta_bar,
    }
}

impl Drafter for SsDraft {
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }

    fn draft(&self, ctx: &[TokenId], len: usize, temperature: f64, rng: &mut Rng) -> SpeculativeWindow {
        ss_window(self, ctx, len, temperature, rng)
    }
}

/// Work accounting for a sequence of emissions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkBound {
    /// J.
    pub steps: usize,
    /// η̄ = Σ η_j / J.
    pub eta_bar: f64,
    /// ⌈γ/η̄⌉.
    pub bound: usize,
}

impl WorkBound {
    pub fn holds(&self) -> bool {
        self.steps <= self.bound
    }
}

/// J, η̄ and ⌈γ/η̄⌉ for emissions `etas` that together cover a window of
/// `gamma` tokens.
pub fn work_bound(gamma: usize, etas: &[usize]) -> Result<WorkBound> {
    if etas.is_empty() || etas.contains(&0) {
        return Err(invalid("every emission needs at least one token"));
    }
    let total: usize = etas.iter().sum();
    if total < gamma {
        return Err(invalid(format!("emissions cover {total} of {gamma} tokens")));
    }
    let eta_bar = total as f64 / etas.len() as f64;
    Ok(WorkBound {
        steps: etas.len(),
        eta_bar,
        bound: (gamma as f64 / eta_bar).ceil() as usize,
    })
}
