//! Toy language models with per-layer (early-exit) distributions.
//!
//! [`LayeredLm`] is the verifying target: it exposes a proxy distribution at
//! every layer and its true next-token distribution at the last one.
//! [`DraftLm`] is anything that proposes tokens.

mod aligned;
mod ngram;
mod proxy;
mod synthetic;
pub mod text;

pub use aligned::AlignedDraft;
pub use ngram::{fit_ngram, NgramLm};
pub use proxy::ProxyLayers;
pub use synthetic::SyntheticLayeredLm;

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dist::{Distribution, TokenId};
use crate::error::Result;
use crate::rng::{combine, mix64};

/// Number of trailing context tokens that key the synthetic models.
pub const CONTEXT_WINDOW: usize = 8;

/// A target model with early-exit access to intermediate layers.
pub trait LayeredLm: Send + Sync {
    /// Number of layers N.
    fn depth(&self) -> usize;

    fn vocab_size(&self) -> usize;

    /// Next-token distribution read out at `layer` (1-based). Layer N is the
    /// model's true distribution.
    fn layer_dist(&self, ctx: &[TokenId], layer: usize) -> Result<Distribution>;

    fn final_dist(&self, ctx: &[TokenId]) -> Distribution {
        self.layer_dist(ctx, self.depth())
            .expect("final layer is always in range")
    }
}

/// A proposal model.
pub trait DraftLm: Send + Sync {
    fn vocab_size(&self) -> usize;

    fn next_dist(&self, ctx: &[TokenId]) -> Distribution;
}

/// Linear noise schedule ε_ℓ = ε0 · (1 − ℓ/N).
pub fn epsilon_schedule(epsilon0: f64, layer: usize, depth: usize) -> f64 {
    epsilon0 * (1.0 - layer as f64 / depth as f64)
}

/// Stable key for the last [`CONTEXT_WINDOW`] tokens of `ctx`.
pub(crate) fn context_key(seed: u64, ctx: &[TokenId]) -> u64 {
    let tail = &ctx[ctx.len().saturating_sub(CONTEXT_WINDOW)..];
    let mut h = mix64(seed ^ tail.len() as u64);
    for t in tail {
        h = mix64(h ^ u64::from(t.0).wrapping_mul(0x1000_0000_01b3));
    }
    h
}

/// Deterministic vector with entries in `[-1, 1]` keyed by `key`.
pub(crate) fn noise_vector(key: u64, len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    (0..len).map(|_| rng.gen_range(-1.0..=1.0)).collect()
}

pub(crate) fn layer_noise_key(ctx_key: u64, layer: usize) -> u64 {
    combine(combine(ctx_key, 0x6e6f_6973), layer as u64)
}

/// Adds `eps * noise` to `logits` and applies softmax.
pub(crate) fn perturbed_softmax(logits: &[f64], eps: f64, noise_key: u64) -> Distribution {
    if eps == 0.0 {
        return Distribution::softmax(logits);
    }
    let noise = noise_vector(noise_key, logits.len());
    let perturbed: Vec<f64> = logits
        .iter()
        .zip(&noise)
        .map(|(l, n)| l + eps * n)
        .collect();
    Distribution::softmax(&perturbed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_is_zero_at_depth() {
        assert_eq!(epsilon_schedule(0.8, 8, 8), 0.0);
        assert!((epsilon_schedule(0.8, 2, 8) - 0.6).abs() < 1e-15);
        for l in 1..8 {
            assert!(epsilon_schedule(0.8, l, 8) >= epsilon_schedule(0.8, l + 1, 8));
        }
    }

    #[test]
    fn context_key_uses_tail_only() {
        let a: Vec<TokenId> = (0..20).map(TokenId).collect();
        let mut b = a.clone();
        b[0] = TokenId(99);
        assert_eq!(context_key(1, &a), context_key(1, &b));
        let mut c = a.clone();
        c[19] = TokenId(99);
        assert_ne!(context_key(1, &a), context_key(1, &c));
        assert_ne!(context_key(1, &a[..1]), context_key(1, &a[..2]));
    }

    #[test]
    fn noise_in_range_and_deterministic() {
        let n = noise_vector(5, 64);
        assert!(n.iter().all(|x| (-1.0..=1.0).contains(x)));
        assert_eq!(n, noise_vector(5, 64));
    }
}
