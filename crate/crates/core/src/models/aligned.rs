use std::sync::Arc;

use crate::dist::{Distribution, TokenId};
use crate::error::{invalid, Result};
use crate::models::{context_key, noise_vector, DraftLm, LayeredLm};

/// Draft that mixes the target's final distribution with a seeded noise
/// distribution. `fidelity` sets how closely it tracks the target, and with it
/// the acceptance rate.
#[derive(Clone)]
pub struct AlignedDraft {
    target: Arc<dyn LayeredLm>,
    fidelity: f64,
    draft_seed: u64,
    noise_sharpness: f64,
}

impl AlignedDraft {
    pub fn new(target: Arc<dyn LayeredLm>, fidelity: f64, draft_seed: u64) -> Result<Self> {
        Self::with_noise_sharpness(target, fidelity, draft_seed, 4.0)
    }

    pub fn with_noise_sharpness(
        target: Arc<dyn LayeredLm>,
        fidelity: f64,
        draft_seed: u64,
        noise_sharpness: f64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&fidelity) {
            return Err(invalid(format!("fidelity {fidelity} outside [0, 1]")));
        }
        Ok(Self {
            target,
            fidelity,
            draft_seed,
            noise_sharpness,
        })
    }

    pub fn fidelity(&self) -> f64 {
        self.fidelity
    }

    /// The draft's own component, independent of the target.
    pub fn noise_dist(&self, ctx: &[TokenId]) -> Distribution {
        let key = context_key(self.draft_seed ^ 0x00d7_af70, ctx);
        let logits: Vec<f64> = noise_vector(key, self.target.vocab_size())
            .into_iter()
            .map(|x| x * self.noise_sharpness)
            .collect();
        Distribution::softmax(&logits)
    }
}

impl DraftLm for AlignedDraft {
    fn vocab_size(&self) -> usize {
        self.target.vocab_size()
    }

    fn next_dist(&self, ctx: &[TokenId]) -> Distribution {
        if self.fidelity == 1.0 {
            return self.target.final_dist(ctx);
        }
        if self.fidelity == 0.0 {
            return self.noise_dist(ctx);
        }
        self.target
            .final_dist(ctx)
            .mix(&self.noise_dist(ctx), self.fidelity)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::tokens;
    use crate::models::SyntheticLayeredLm;

    fn target(seed: u64) -> Arc<dyn LayeredLm> {
        Arc::new(SyntheticLayeredLm::new(8, 4, seed, 0.3, 4.0).unwrap())
    }

    #[test]
    fn full_fidelity_is_target() {
        let t = target(1);
        let d = AlignedDraft::new(t.clone(), 1.0, 9).unwrap();
        let ctx = tokens(&[1, 2]);
        assert_eq!(d.next_dist(&ctx), t.final_dist(&ctx));
    }

    #[test]
    fn zero_fidelity_ignores_target() {
        let ctx = tokens(&[0, 3, 3]);
        let a = AlignedDraft::new(target(1), 0.0, 9).unwrap();
        let b = AlignedDraft::new(target(2), 0.0, 9).unwrap();
        assert_ne!(target(1).final_dist(&ctx), target(2).final_dist(&ctx));
        assert_eq!(a.next_dist(&ctx), b.next_dist(&ctx));
        assert_eq!(a.next_dist(&ctx), a.noise_dist(&ctx));
    }

    #[test]
    fn mixture_is_normalized() {
        let d = AlignedDraft::new(target(3), 0.6, 2).unwrap();
        let p = d.next_dist(&tokens(&[2]));
        assert!(Distribution::new(p.probs().to_vec()).is_ok());
    }

    #[test]
    fn rejects_bad_fidelity() {
        assert!(AlignedDraft::new(target(1), 1.5, 0).is_err());
    }
}
