use serde::{Deserialize, Serialize};

use crate::dist::TokenId;
use crate::error::{invalid, Result};

/// Per-session decoding parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeConfig {
    /// Speculative window length γ.
    pub gamma: usize,
    /// Token-channel width κ.
    pub kappa: usize,
    /// Early-exit layer ℓ_e. `None` means the middle layer, N/2.
    pub exit_layer: Option<usize>,
    pub temperature: f64,
    pub max_new_tokens: usize,
    pub seed: u64,
    /// Generation stops once this token is committed.
    pub eos: Option<TokenId>,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            gamma: 7,
            kappa: 8,
            exit_layer: None,
            temperature: 0.0,
            max_new_tokens: 200,
            seed: 0,
            eos: None,
        }
    }
}

impl DecodeConfig {
    pub fn exit_layer_for(&self, depth: usize) -> usize {
        self.exit_layer.unwrap_or((depth / 2).max(1))
    }

    pub fn validate(&self, vocab_size: usize, depth: usize) -> Result<()> {
        if self.gamma < 1 {
            return Err(invalid("gamma must be at least 1"));
        }
        if self.kappa < 1 || self.kappa > vocab_size {
            return Err(invalid(format!(
                "kappa {} outside [1, {vocab_size}]",
                self.kappa
            )));
        }
        let exit = self.exit_layer_for(depth);
        if exit < 1 || exit >= depth {
            return Err(invalid(format!(
                "exit layer {exit} outside [1, {}]",
                depth.saturating_sub(1)
            )));
        }
        if !(self.temperature >= 0.0) || !self.temperature.is_finite() {
            return Err(invalid("temperature must be finite and non-negative"));
        }
        if let Some(eos) = self.eos {
            if eos.index() >= vocab_size {
                return Err(invalid(format!("eos token {eos} outside vocabulary")));
            }
        }
        Ok(())
    }
}
