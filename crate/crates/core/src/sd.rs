//! Vanilla speculative decoding: draft a window, verify it left to right
//! against the target, commit the longest agreeing prefix plus one target
//! token.

use serde::{Deserialize, Serialize};

use crate::config::DecodeConfig;
use crate::dist::TokenId;
use crate::error::{invalid, Result};
use crate::models::{DraftLm, LayeredLm};
use crate::rng::{Rng, SessionStreams};
use crate::sim::StepRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowSource {
    Fresh,
    ReusedBranch,
    ReusedRoot,
}

/// Draft proposal for the positions after the committed context.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeculativeWindow {
    pub tokens: Vec<TokenId>,
    pub source: WindowSource,
    /// Internal draft steps J spent producing the freshly drafted part.
    pub draft_steps: usize,
    /// Mean tokens emitted per internal draft step (1 for autoregressive).
    pub eta_bar: f64,
}

impl SpeculativeWindow {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Anything that can produce a window of draft tokens.
pub trait Drafter: Send + Sync {
    fn vocab_size(&self) -> usize;

    /// Drafts `len` tokens continuing `ctx`.
    fn draft(&self, ctx: &[TokenId], len: usize, temperature: f64, rng: &mut Rng) -> SpeculativeWindow;
}

/// Plain autoregressive drafting: one token per internal step.
pub struct Autoregressive<D>(pub D);

impl<D: AsRef<dyn DraftLm> + Send + Sync> Drafter for Autoregressive<D> {
    fn vocab_size(&self) -> usize {
        self.0.as_ref().vocab_size()
    }

    fn draft(&self, ctx: &[TokenId], len: usize, temperature: f64, rng: &mut Rng) -> SpeculativeWindow {
        speculate_window(self.0.as_ref(), ctx, len, temperature, rng)
    }
}

/// Samples `gamma` tokens autoregressively from the draft. Consumes exactly
/// `gamma` draws when `temperature > 0`, none otherwise.
pub fn speculate_window(
    draft: &dyn DraftLm,
    ctx: &[TokenId],
    gamma: usize,
    temperature: f64,
    rng: &mut Rng,
) -> SpeculativeWindow {
    let mut extended = ctx.to_vec();
    let mut out = Vec::with_capacity(gamma);
    for _ in 0..gamma {
        let t = draft.next_dist(&extended).sample(temperature, rng);
        extended.push(t);
        out.push(t);
    }
    SpeculativeWindow {
        tokens: out,
        source: WindowSource::Fresh,
        draft_steps: gamma,
        eta_bar: 1.0,
    }
}

/// Outcome of verifying one window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AcceptanceResult {
    /// Absolute position of the first window token.
    pub position: usize,
    pub window_len: usize,
    /// A_t: longest prefix on which draft and target agree.
    pub accepted_len: usize,
    /// Target token at the first mismatch, present iff `accepted_len < window_len`.
    pub correction: Option<TokenId>,
    /// τ = A_t + 1 when a correction exists.
    pub tau: Option<usize>,
    pub committed: Vec<TokenId>,
    /// Target roll-forward; on full acceptance the last entry is the bonus token.
    pub target_tokens: Vec<TokenId>,
    /// F_t, filled in by the mirror step when a correction exists.
    pub fallback: Option<bool>,
}

impl AcceptanceResult {
    /// Π_t, the accepted target tokens.
    pub fn accepted(&self) -> &[TokenId] {
        &self.target_tokens[..self.accepted_len]
    }

    /// Π_t^+ = (Π_t, c_{t+τ}); `None` on full acceptance.
    pub fn corrected_prefix(&self) -> Option<Vec<TokenId>> {
        self.correction.map(|c| {
            let mut p = self.accepted().to_vec();
            p.push(c);
            p
        })
    }
}

/// The target's token at position `ctx.len()`: argmax at temperature 0,
/// otherwise sampled with the draw keyed by that absolute position.
pub fn target_token(
    target: &dyn LayeredLm,
    ctx: &[TokenId],
    temperature: f64,
    streams: &SessionStreams,
) -> TokenId {
    let dist = target.final_dist(ctx);
    if temperature == 0.0 {
        dist.argmax()
    } else {
        dist.sample(temperature, &mut streams.target(ctx.len()))
    }
}

/// Teacher-forced verification of `window` against the target.
pub fn verify(
    target: &dyn LayeredLm,
    ctx: &[TokenId],
    window: &SpeculativeWindow,
    temperature: f64,
    streams: &SessionStreams,
) -> Result<AcceptanceResult> {
    if window.is_empty() {
        return Err(invalid("cannot verify an empty window"));
    }
    let mut rolled = ctx.to_vec();
    let mut target_tokens = Vec::with_capacity(window.len() + 1);
    for (j, &proposed) in window.tokens.iter().enumerate() {
        let y = target_token(target, &rolled, temperature, streams);
        target_tokens.push(y);
        if y != proposed {
            return Ok(AcceptanceResult {
                position: ctx.len(),
                window_len: window.len(),
                accepted_len: j,
                correction: Some(y),
                tau: Some(j + 1),
                committed: target_tokens.clone(),
                target_tokens,
                fallback: None,
            });
        }
        rolled.push(y);
    }
    let bonus = target_token(target, &rolled, temperature, streams);
    target_tokens.push(bonus);
    Ok(AcceptanceResult {
        position: ctx.len(),
        window_len: window.len(),
        accepted_len: window.len(),
        correction: None,
        tau: None,
        committed: target_tokens.clone(),
        target_tokens,
        fallback: None,
    })
}

/// Output of a speculative decode session.
#[derive(Debug, Clone)]
pub struct DecodeRun {
    /// Tokens generated after the prompt.
    pub generated: Vec<TokenId>,
    pub results: Vec<AcceptanceResult>,
    pub records: Vec<StepRecord>,
}

/// Appends `committed` to the session, honoring the token budget and EOS.
/// Returns `true` when generation is finished.
pub(crate) fn commit(
    ctx: &mut Vec<TokenId>,
    generated: &mut Vec<TokenId>,
    committed: &[TokenId],
    config: &DecodeConfig,
) -> bool {
    for &t in committed {
        if generated.len() >= config.max_new_tokens {
            return true;
        }
        ctx.push(t);
        generated.push(t);
        if config.eos == Some(t) {
            return true;
        }
    }
    generated.len() >= config.max_new_tokens
}

fn check_prompt(prompt: &[TokenId], vocab: usize) -> Result<()> {
    if prompt.is_empty() {
        return Err(invalid("prompt must not be empty"));
    }
    if let Some(t) = prompt.iter().find(|t| t.index() >= vocab) {
        return Err(invalid(format!("prompt token {t} outside vocabulary")));
    }
    Ok(())
}

pub(crate) fn check_session(
    target: &dyn LayeredLm,
    drafter_vocab: usize,
    prompt: &[TokenId],
    config: &DecodeConfig,
) -> Result<()> {
    if drafter_vocab != target.vocab_size() {
        return Err(invalid(format!(
            "draft vocabulary {drafter_vocab} does not match target {}",
            target.vocab_size()
        )));
    }
    check_prompt(prompt, target.vocab_size())?;
    config.validate(target.vocab_size(), target.depth())
}

/// Target-only autoregressive decoding; the reference every speculative
/// decoder must reproduce.
pub fn ar_decode(
    target: &dyn LayeredLm,
    prompt: &[TokenId],
    config: &DecodeConfig,
) -> Result<Vec<TokenId>> {
    check_prompt(prompt, target.vocab_size())?;
    let streams = SessionStreams::new(config.seed);
    let mut ctx = prompt.to_vec();
    let mut generated = Vec::with_capacity(config.max_new_tokens);
    while generated.len() < config.max_new_tokens {
        let t = target_token(target, &ctx, config.temperature, &streams);
        if commit(&mut ctx, &mut generated, &[t], config) {
            break;
        }
    }
    Ok(generated)
}

/// Vanilla speculative decoding until `max_new_tokens` or EOS.
pub fn sd_decode(
    target: &dyn LayeredLm,
    drafter: &dyn Drafter,
    prompt: &[TokenId],
    config: &DecodeConfig,
) -> Result<DecodeRun> {
    check_session(target, drafter.vocab_size(), prompt, config)?;
    let streams = SessionStreams::new(config.seed);
    let mut ctx = prompt.to_vec();
    let mut generated = Vec::with_capacity(config.max_new_tokens);
    let mut results = Vec::new();
    let mut records = Vec::new();
    while generated.len() < config.max_new_tokens {
        let len = config.gamma.min(config.max_new_tokens - generated.len());
        let mut rng = streams.draft_window(ctx.len());
        let window = drafter.draft(&ctx, len, config.temperature, &mut rng);
        let result = verify(target, &ctx, &window, config.temperature, &streams)?;
        records.push(StepRecord::vanilla(records.len(), &window, &result));
        let done = commit(&mut ctx, &mut generated, &result.committed, config);
        results.push(result);
        if done {
            break;
        }
    }
    Ok(DecodeRun {
        generated,
        results,
        records,
    })
}

/// Mean acceptance length E[A_t] and acceptance rate ρ = E[A_t]/γ.
pub fn acceptance_stats(trace: &[AcceptanceResult], gamma: usize) -> Result<(f64, f64)> {
    if trace.is_empty() {
        return Err(invalid("acceptance stats need at least one step"));
    }
    if gamma == 0 {
        return Err(invalid("gamma must be at least 1"));
    }
    let mean = trace.iter().map(|r| r.accepted_len as f64).sum::<f64>() / trace.len() as f64;
    Ok((mean, mean / gamma as f64))
}
