use serde::Serialize;

use crate::mirror::{HypothesisTree, ReuseCase, ReuseDecision};
use crate::sd::{AcceptanceResult, SpeculativeWindow, WindowSource};

/// Per-step trace entry shared by every speculative mode.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    /// Committed length before the step.
    pub position: usize,
    pub window_len: usize,
    /// A_t.
    pub accepted_len: usize,
    /// Tokens committed by the step (after budget and EOS truncation).
    pub committed: usize,
    /// F_t, only for steps with a correction in mirror mode.
    pub fallback: Option<bool>,
    /// J spent drafting this step's window. Reused windows only count top-up.
    pub draft_steps: usize,
    pub eta_bar: f64,
    /// Internal steps of each tree branch built during this step.
    pub tree_steps: Vec<usize>,
    pub reuse: Option<ReuseCase>,
    /// Token-channel items per sequence (κ in mirror mode, 0 otherwise).
    pub channel_items: usize,
    pub window_source: WindowSource,
    /// Ω_κ at this step's context.
    pub omega: Option<f64>,
}

impl StepRecord {
    pub fn vanilla(step: usize, window: &SpeculativeWindow, result: &AcceptanceResult) -> Self {
        Self {
            step,
            position: result.position,
            window_len: window.len(),
            accepted_len: result.accepted_len,
            committed: result.committed.len(),
            fallback: None,
            draft_steps: window.draft_steps,
            eta_bar: window.eta_bar,
            tree_steps: Vec::new(),
            reuse: None,
            channel_items: 0,
            window_source: window.source,
            omega: None,
        }
    }

    pub fn mirror(
        step: usize,
        window: &SpeculativeWindow,
        result: &AcceptanceResult,
        decision: &ReuseDecision,
        tree: &HypothesisTree,
        kappa: usize,
        omega: f64,
    ) -> Self {
        Self {
            fallback: result.fallback,
            tree_steps: tree.branch_steps(),
            reuse: (!decision.no_correction).then_some(decision.case),
            channel_items: kappa,
            omega: Some(omega),
            ..Self::vanilla(step, window, result)
        }
    }

    /// Items carried by the channel for a batch of `batch` sequences.
    pub fn payload_items(&self, batch: usize) -> usize {
        batch * self.channel_items
    }
}
