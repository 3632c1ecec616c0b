//! Tokens, next-token distributions, Top-κ extraction and sampling.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::Rng;

/// Normalization tolerance for [`Distribution`].
pub const NORM_TOLERANCE: f64 = 1e-9;

/// Index into the session vocabulary.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u32> for TokenId {
    fn from(v: u32) -> Self {
        TokenId(v)
    }
}

/// Convenience for literals in tests and examples.
pub fn tokens(ids: &[u32]) -> Vec<TokenId> {
    ids.iter().copied().map(TokenId).collect()
}

/// One Top-κ entry: token and natural-log probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopKEntry {
    pub token: TokenId,
    pub logp: f64,
}

/// Probability vector over the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    probs: Vec<f64>,
}

impl Distribution {
    /// Validates non-negativity and normalization within [`NORM_TOLERANCE`].
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(invalid("distribution over an empty vocabulary"));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(invalid(format!("probability {p} is negative or not finite")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > NORM_TOLERANCE {
            return Err(invalid(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(Self { probs })
    }

    /// Normalizes non-negative weights.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(invalid("weights must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(invalid("weights sum to zero"));
        }
        Self::new(weights.into_iter().map(|w| w / total).collect())
    }

    /// Softmax of logits. Entries equal to `-inf` get probability zero.
    pub fn softmax(logits: &[f64]) -> Self {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(max.is_finite(), "softmax needs at least one finite logit");
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        Self {
            probs: exps.into_iter().map(|e| e / total).collect(),
        }
    }

    pub fn uniform(vocab_size: usize) -> Self {
        Self {
            probs: vec![1.0 / vocab_size as f64; vocab_size],
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn vocab_size(&self) -> usize {
        self.probs.len()
    }

    pub fn prob(&self, token: TokenId) -> f64 {
        self.probs[token.index()]
    }

    /// Highest-probability token; ties go to the smallest id.
    pub fn argmax(&self) -> TokenId {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate().skip(1) {
            if *p > self.probs[best] {
                best = i;
            }
        }
        TokenId(best as u32)
    }

    /// Token ids ordered by probability descending, ties by ascending id.
    pub fn ranked(&self) -> Vec<TokenId> {
        let mut ids: Vec<usize> = (0..self.probs.len()).collect();
        ids.sort_by(|&a, &b| {
            self.probs[b]
                .partial_cmp(&self.probs[a])
                .unwrap_or(Ordering::Equal)
                .then(a.cmp(&b))
        });
        ids.into_iter().map(|i| TokenId(i as u32)).collect()
    }

    /// The κ most probable tokens with their log-probabilities.
    pub fn top_k(&self, kappa: usize) -> Result<Vec<TopKEntry>> {
        if kappa < 1 || kappa > self.probs.len() {
            return Err(invalid(format!(
                "kappa {kappa} outside [1, {}]",
                self.probs.len()
            )));
        }
        Ok(self
            .ranked()
            .into_iter()
            .take(kappa)
            .map(|token| TopKEntry {
                token,
                logp: self.prob(token).ln(),
            })
            .collect())
    }

    /// Samples a token. Temperature 0 is argmax and consumes no randomness;
    /// otherwise exactly one uniform draw is consumed.
    pub fn sample(&self, temperature: f64, rng: &mut Rng) -> TokenId {
        if temperature == 0.0 {
            return self.argmax();
        }
        self.sample_with_uniform(temperature, rng.uniform())
    }

    /// Inverse-CDF sampling over ascending ids from `probs^(1/T)`, given the
    /// uniform draw `u` in `[0, 1)`.
    pub fn sample_with_uniform(&self, temperature: f64, u: f64) -> TokenId {
        if temperature == 0.0 {
            return self.argmax();
        }
        assert!(temperature > 0.0, "temperature must be non-negative");
        let weights: Vec<f64> = if temperature == 1.0 {
            self.probs.clone()
        } else {
            self.probs.iter().map(|p| p.powf(1.0 / temperature)).collect()
        };
        // at T = 1 the probabilities are already normalized
        let target = if temperature == 1.0 {
            u
        } else {
            u * weights.iter().sum::<f64>()
        };
        let mut cumulative = 0.0;
        let mut last_positive = 0;
        for (i, w) in weights.iter().enumerate() {
            if *w > 0.0 {
                last_positive = i;
                cumulative += w;
                if target < cumulative {
                    return TokenId(i as u32);
                }
            }
        }
        TokenId(last_positive as u32)
    }

    /// `max_i |p_i - q_i|`.
    pub fn sup_distance(&self, other: &Distribution) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `w * self + (1 - w) * other`, renormalized.
    pub fn mix(&self, other: &Distribution, w: f64) -> Distribution {
        let mixed: Vec<f64> = self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| w * a + (1.0 - w) * b)
            .collect();
        let total: f64 = mixed.iter().sum();
        Distribution {
            probs: mixed.into_iter().map(|p| p / total).collect(),
        }
    }

    /// Mass of the given token set.
    pub fn mass<'a>(&self, set: impl IntoIterator<Item = &'a TokenId>) -> f64 {
        set.into_iter().map(|t| self.prob(*t)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::rng::Rng;

    fn d(p: &[f64]) -> Distribution {
        Distribution::new(p.to_vec()).unwrap()
    }

    #[test]
    fn top1_is_argmax() {
        let top = d(&[0.1, 0.6, 0.3]).top_k(1).unwrap();
        assert_eq!(top.len(), 1);
        assert_eq!(top[0].token, TokenId(1));
        assert!((top[0].logp - 0.6f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn top3_sorted_descending() {
        let ids: Vec<u32> = d(&[0.1, 0.6, 0.3])
            .top_k(3)
            .unwrap()
            .iter()
            .map(|e| e.token.0)
            .collect();
        assert_eq!(ids, vec![1, 2, 0]);
    }

    #[test]
    fn ties_broken_by_ascending_id() {
        let top = d(&[0.5, 0.5]).top_k(2).unwrap();
        assert_eq!(top[0].token, TokenId(0));
        assert_eq!(top[1].token, TokenId(1));
        assert_eq!(top[0].logp, 0.5f64.ln());
        assert_eq!(d(&[0.25, 0.25, 0.5, 0.0]).argmax(), TokenId(2));
        assert_eq!(d(&[0.4, 0.4, 0.2]).argmax(), TokenId(0));
    }

    #[test]
    fn top_k_rejects_bad_kappa() {
        let p = d(&[0.5, 0.5]);
        assert!(p.top_k(0).is_err());
        assert!(p.top_k(3).is_err());
    }

    #[test]
    fn rejects_unnormalized() {
        assert!(Distribution::new(vec![0.5, 0.4]).is_err());
        assert!(Distribution::new(vec![1.5, -0.5]).is_err());
        assert!(Distribution::new(vec![]).is_err());
        assert!(Distribution::new(vec![0.5, 0.5 + 5e-10]).is_ok());
    }

    #[test]
    fn greedy_sampling() {
        let mut rng = Rng::new(3);
        assert_eq!(d(&[0.1, 0.6, 0.3]).sample(0.0, &mut rng), TokenId(1));
        assert_eq!(rng.draws(), 0);
    }

    #[test]
    fn degenerate_sampling() {
        for seed in 0..50 {
            let mut rng = Rng::new(seed);
            assert_eq!(d(&[1.0, 0.0]).sample(1.0, &mut rng), TokenId(0));
            assert_eq!(rng.draws(), 1);
        }
    }

    #[test]
    fn inverse_cdf_uniform_draw() {
        // cumulative [0.25, 0.5, 0.75, 1.0]; u = 0.6 falls in the third bucket
        assert_eq!(d(&[0.25; 4]).sample_with_uniform(1.0, 0.6), TokenId(2));
        assert_eq!(d(&[0.25; 4]).sample_with_uniform(1.0, 0.0), TokenId(0));
        assert_eq!(d(&[0.25; 4]).sample_with_uniform(1.0, 0.999_999), TokenId(3));
    }

    #[test]
    fn zero_probability_tokens_never_sampled() {
        let p = d(&[0.0, 0.5, 0.0, 0.5, 0.0]);
        for i in 0..1000 {
            let u = i as f64 / 1000.0;
            let t = p.sample_with_uniform(1.0, u);
            assert!(t == TokenId(1) || t == TokenId(3));
        }
    }

    #[test]
    fn low_temperature_sharpens() {
        let p = d(&[0.2, 0.8]);
        // with T = 0.5 the weights are 0.04 and 0.64; u = 0.1 * 0.68 / 0.68
        assert_eq!(p.sample_with_uniform(0.5, 0.06), TokenId(1));
        assert_eq!(p.sample_with_uniform(1.0, 0.06), TokenId(0));
    }

    #[test]
    fn sup_distance_and_mass() {
        let a = d(&[0.5, 0.3, 0.2]);
        let b = d(&[0.2, 0.5, 0.3]);
        assert!((a.sup_distance(&b) - 0.3).abs() < 1e-15);
        assert!((a.mass(&[TokenId(1), TokenId(2)]) - 0.5).abs() < 1e-15);
    }

    fn arb_dist() -> impl Strategy<Value = Distribution> {
        prop::collection::vec(0.0f64..1.0, 2..24).prop_filter_map("zero mass", |w| {
            Distribution::from_weights(w).ok()
        })
    }

    proptest! {
        #[test]
        fn top_k_prefix_property(p in arb_dist(), a in 1usize..24, b in 1usize..24) {
            let v = p.vocab_size();
            let (k1, k2) = (a.min(b).min(v), a.max(b).min(v));
            let small = p.top_k(k1).unwrap();
            let large = p.top_k(k2).unwrap();
            prop_assert_eq!(&large[..k1], &small[..]);
        }

        #[test]
        fn greedy_ignores_seed(p in arb_dist(), s1 in any::<u64>(), s2 in any::<u64>()) {
            let mut r1 = Rng::new(s1);
            let mut r2 = Rng::new(s2);
            prop_assert_eq!(p.sample(0.0, &mut r1), p.sample(0.0, &mut r2));
            prop_assert_eq!(r1.draws(), 0);
        }

        #[test]
        fn shared_draw_couples_agreeing_distributions(
            p in arb_dist(), u in 0.0f64..1.0, cut in 0usize..24,
        ) {
            // q agrees with p on every token up to `cut`; if the draw lands in
            // that region under p, q must select the same token
            let v = p.vocab_size();
            let cut = cut.min(v - 1);
            let mut q = p.probs().to_vec();
            let head: f64 = q[..=cut].iter().sum();
            let tail = 1.0 - head;
            if tail > 1e-12 {
                let n = (v - cut - 1) as f64;
                for x in &mut q[cut + 1..] { *x = tail / n; }
            }
            let q = Distribution::new(q).unwrap();
            let tp = p.sample_with_uniform(1.0, u);
            if tp.index() <= cut && u * 1.0 < head - 1e-12 {
                prop_assert_eq!(q.sample_with_uniform(1.0, u), tp);
            }
        }
    }
}
