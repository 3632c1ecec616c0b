use crate::dist::{Distribution, TokenId};
use crate::error::{invalid, Result};
use crate::models::{context_key, epsilon_schedule, layer_noise_key, perturbed_softmax, DraftLm, LayeredLm};

/// Turns any next-token model into a layered target: layer N is the model
/// itself, layer ℓ perturbs its log-probabilities by `ε_ℓ * noise`.
#[derive(Debug, Clone)]
pub struct ProxyLayers<M> {
    base: M,
    depth: usize,
    epsilon0: f64,
    seed: u64,
}

impl<M: DraftLm> ProxyLayers<M> {
    pub fn new(base: M, depth: usize, epsilon0: f64, seed: u64) -> Result<Self> {
        if depth < 2 {
            return Err(invalid("depth must be at least 2"));
        }
        if !(epsilon0 >= 0.0) {
            return Err(invalid("epsilon0 must be non-negative"));
        }
        Ok(Self {
            base,
            depth,
            epsilon0,
            seed,
        })
    }

    pub fn base(&self) -> &M {
        &self.base
    }
}

impl<M: DraftLm> LayeredLm for ProxyLayers<M> {
    fn depth(&self) -> usize {
        self.depth
    }

    fn vocab_size(&self) -> usize {
        self.base.vocab_size()
    }

    fn layer_dist(&self, ctx: &[TokenId], layer: usize) -> Result<Distribution> {
        if layer < 1 || layer > self.depth {
            return Err(invalid(format!(
                "layer {layer} outside [1, {}]",
                self.depth
            )));
        }
        let p = self.base.next_dist(ctx);
        let eps = epsilon_schedule(self.epsilon0, layer, self.depth);
        if eps == 0.0 {
            return Ok(p);
        }
        let logits: Vec<f64> = p.probs().iter().map(|x| x.ln()).collect();
        let key = layer_noise_key(context_key(self.seed, ctx), layer);
        Ok(perturbed_softmax(&logits, eps, key))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::tokens;
    use crate::models::fit_ngram;

    #[test]
    fn final_layer_is_base() {
        let lm = fit_ngram(&tokens(&[0, 1, 2, 0, 1, 2, 0]), 2, 0.0, 3).unwrap();
        let layered = ProxyLayers::new(lm.clone(), 6, 0.8, 3).unwrap();
        let ctx = tokens(&[1]);
        assert_eq!(layered.final_dist(&ctx), lm.next_dist(&ctx));
    }

    #[test]
    fn zero_probabilities_survive_perturbation() {
        let lm = fit_ngram(&tokens(&[0, 1, 2, 0, 1, 2, 0]), 2, 0.0, 4).unwrap();
        let layered = ProxyLayers::new(lm, 6, 0.8, 3).unwrap();
        let p = layered.layer_dist(&tokens(&[1]), 2).unwrap();
        assert_eq!(p.prob(TokenId(3)), 0.0);
        assert!(Distribution::new(p.probs().to_vec()).is_ok());
    }

    #[test]
    fn intermediate_within_epsilon() {
        let lm = fit_ngram(&tokens(&[0, 1, 2, 3, 1, 0, 2, 2, 3, 1]), 2, 0.5, 4).unwrap();
        let layered = ProxyLayers::new(lm, 8, 0.8, 5).unwrap();
        for c in 0..4 {
            let ctx = tokens(&[c]);
            for l in 1..8 {
                let d = layered
                    .layer_dist(&ctx, l)
                    .unwrap()
                    .sup_distance(&layered.final_dist(&ctx));
                assert!(d <= epsilon_schedule(0.8, l, 8));
            }
        }
    }
}
