use crate::dist::{Distribution, TokenId};
use crate::error::{invalid, Result};
use crate::models::{
    context_key, epsilon_schedule, layer_noise_key, noise_vector, perturbed_softmax, LayeredLm,
};

/// Hash-keyed toy target whose intermediate layers are noisy copies of the
/// final layer.
///
/// Final logits are `sharpness * h(ctx)` with `h` in `[-1, 1]^V`; layer ℓ adds
/// `ε_ℓ * n(ctx, ℓ)` with `ε_ℓ = ε0 (1 − ℓ/N)`. Since softmax is
/// 1/2-Lipschitz from sup-norm logits to sup-norm probabilities, every
/// context satisfies `‖p^(ℓ) − p^(N)‖∞ ≤ ε_ℓ / 2`.
#[derive(Debug, Clone)]
pub struct SyntheticLayeredLm {
    depth: usize,
    vocab_size: usize,
    base_seed: u64,
    epsilon0: f64,
    sharpness: f64,
}

impl SyntheticLayeredLm {
    pub const DEFAULT_SHARPNESS: f64 = 4.0;

    pub fn new(
        depth: usize,
        vocab_size: usize,
        base_seed: u64,
        epsilon0: f64,
        sharpness: f64,
    ) -> Result<Self> {
        if depth < 2 {
            return Err(invalid("depth must be at least 2 to allow an early exit"));
        }
        if vocab_size < 1 || vocab_size > u32::MAX as usize {
            return Err(invalid("vocab size out of range"));
        }
        if !(epsilon0 >= 0.0) || !(sharpness > 0.0) {
            return Err(invalid("epsilon0 must be >= 0 and sharpness > 0"));
        }
        Ok(Self {
            depth,
            vocab_size,
            base_seed,
            epsilon0,
            sharpness,
        })
    }

    pub fn epsilon0(&self) -> f64 {
        self.epsilon0
    }

    pub fn sharpness(&self) -> f64 {
        self.sharpness
    }

    pub fn epsilon(&self, layer: usize) -> f64 {
        epsilon_schedule(self.epsilon0, layer, self.depth)
    }

    fn logits(&self, key: u64) -> Vec<f64> {
        noise_vector(key, self.vocab_size)
            .into_iter()
            .map(|x| x * self.sharpness)
            .collect()
    }
}

impl LayeredLm for SyntheticLayeredLm {
    fn depth(&self) -> usize {
        self.depth
    }

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn layer_dist(&self, ctx: &[TokenId], layer: usize) -> Result<Distribution> {
        if layer < 1 || layer > self.depth {
            return Err(invalid(format!(
                "layer {layer} outside [1, {}]",
                self.depth
            )));
        }
        let key = context_key(self.base_seed, ctx);
        Ok(perturbed_softmax(
            &self.logits(key),
            self.epsilon(layer),
            layer_noise_key(key, layer),
        ))
    }
}
