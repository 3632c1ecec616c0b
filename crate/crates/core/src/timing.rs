//! Analytic latency model for a target and a draft on separate devices.
//!
//! Every target layer costs its compute plus two tensor-parallel allreduces
//! over activation shards; every internal draft step costs the same shape on
//! the draft's group. A mirror step runs the target prefix, exchanges the
//! early-exit message, then overlaps the target suffix with all draft work
//! and ends with the final rendezvous. Vanilla speculation runs the draft and
//! the full target back to back and pays no rendezvous.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Cost of one token-level exchange: a fixed sampling part plus a transfer
/// part per item on the channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Rendezvous {
    pub sample: f64,
    pub transfer_per_item: f64,
}

impl Default for Rendezvous {
    fn default() -> Self {
        Self {
            sample: 0.04,
            transfer_per_item: 0.00125,
        }
    }
}

impl Rendezvous {
    pub fn fixed(sample: f64) -> Self {
        Self {
            sample,
            transfer_per_item: 0.0,
        }
    }

    pub fn cost(&self, items: usize) -> f64 {
        self.sample + self.transfer_per_item * items as f64
    }
}

/// All times in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatencyParams {
    /// u^t_ℓ for ℓ = 1..N; the layer time c_ℓ adds two target allreduces.
    pub layer_compute: Vec<f64>,
    pub exit_layer: usize,
    /// u^d per internal draft step.
    pub draft_step_compute: f64,
    /// Draft synchronization per step, excluding its allreduces.
    pub draft_step_sync: f64,
    /// Compute of one tree-building step; `None` reuses `draft_step_compute`.
    pub tree_step_compute: Option<f64>,
    pub rv_ee: Rendezvous,
    pub rv_fv: Rendezvous,
    pub alpha: f64,
    pub beta: f64,
    pub target_group: usize,
    pub draft_group: usize,
    pub hidden_target: usize,
    pub hidden_draft: usize,
    /// S_T.
    pub tokens_per_collective_target: usize,
    /// S_D; `None` means γ·κ.
    pub tokens_per_collective_draft: Option<usize>,
    pub batch: usize,
    pub gamma: usize,
    pub kappa: usize,
    /// Tree branches built concurrently; `None` means all κ at once.
    pub branch_parallelism: Option<usize>,
}

impl Default for LatencyParams {
    fn default() -> Self {
        Self {
            layer_compute: vec![1.0; 8],
            exit_layer: 4,
            draft_step_compute: 0.15,
            draft_step_sync: 0.0,
            tree_step_compute: None,
            rv_ee: Rendezvous::default(),
            rv_fv: Rendezvous::default(),
            alpha: 0.01,
            beta: 1e-6,
            target_group: 8,
            draft_group: 8,
            hidden_target: 4096,
            hidden_draft: 1024,
            tokens_per_collective_target: 1,
            tokens_per_collective_draft: None,
            batch: 1,
            gamma: 7,
            kappa: 8,
            branch_parallelism: None,
        }
    }
}

impl LatencyParams {
    /// `depth` unit layers with free collectives and fixed rendezvous costs.
    pub fn unit_layers(depth: usize, exit_layer: usize, rv_each: f64) -> Self {
        Self {
            layer_compute: vec![1.0; depth],
            exit_layer,
            alpha: 0.0,
            beta: 0.0,
            rv_ee: Rendezvous::fixed(rv_each),
            rv_fv: Rendezvous::fixed(rv_each),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.depth();
        if n < 2 {
            return Err(invalid("latency model needs at least two target layers"));
        }
        if self.exit_layer < 1 || self.exit_layer >= n {
            return Err(invalid(format!("exit layer {} outside [1, {}]", self.exit_layer, n - 1)));
        }
        if self.target_group < 1 || self.draft_group < 1 {
            return Err(invalid("collective groups need at least one device"));
        }
        if self.batch < 1 || self.gamma < 1 || self.kappa < 1 {
            return Err(invalid("batch, gamma and kappa must be at least 1"));
        }
        if self.branch_parallelism == Some(0) {
            return Err(invalid("branch parallelism must be at least 1"));
        }
        let times = self
            .layer_compute
            .iter()
            .chain([
                &self.draft_step_compute,
                &self.draft_step_sync,
                &self.alpha,
                &self.beta,
                &self.rv_ee.sample,
                &self.rv_ee.transfer_per_item,
                &self.rv_fv.sample,
                &self.rv_fv.transfer_per_item,
            ])
            .chain(self.tree_step_compute.iter());
        for t in times {
            if !t.is_finite() || *t < 0.0 {
                return Err(invalid(format!("times must be finite and non-negative, got {t}")));
            }
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.layer_compute.len()
    }

    /// M_T = B·S_T·H_T/G_T.
    pub fn target_shard_words(&self) -> f64 {
        (self.batch * self.tokens_per_collective_target * self.hidden_target) as f64
            / self.target_group as f64
    }

    /// M_D = B·S_D·H_D/G_D.
    pub fn draft_shard_words(&self) -> f64 {
        let s = self
            .tokens_per_collective_draft
            .unwrap_or(self.gamma * self.kappa);
        (self.batch * s * self.hidden_draft) as f64 / self.draft_group as f64
    }

    fn target_sync(&self) -> f64 {
        2.0 * allreduce_cost(self.target_shard_words(), self.target_group, self.alpha, self.beta)
    }

    fn draft_sync(&self) -> f64 {
        self.draft_step_sync
            + 2.0 * allreduce_cost(self.draft_shard_words(), self.draft_group, self.alpha, self.beta)
    }

    /// c_ℓ for a 1-based layer.
    pub fn layer_time(&self, layer: usize) -> f64 {
        self.layer_compute[layer - 1] + self.target_sync()
    }

    fn layer_span(&self, from: usize, to: usize) -> f64 {
        (from..=to).map(|l| self.layer_time(l)).sum()
    }

    /// T_target: one full forward pass.
    pub fn target_time(&self) -> f64 {
        self.layer_span(1, self.depth())
    }

    /// Layers 1..ℓ_e.
    pub fn prefix_time(&self) -> f64 {
        self.layer_span(1, self.exit_layer)
    }

    /// Δ: layers ℓ_e+1..N.
    pub fn overlap_budget(&self) -> f64 {
        self.layer_span(self.exit_layer + 1, self.depth())
    }

    /// u^d + s^d of one internal draft step.
    pub fn draft_step_time(&self) -> f64 {
        self.draft_step_compute + self.draft_sync()
    }

    /// One tree-building step.
    pub fn tree_step_time(&self) -> f64 {
        self.tree_step_compute.unwrap_or(self.draft_step_compute) + self.draft_sync()
    }

    pub fn payload_items(&self) -> usize {
        self.batch * self.kappa
    }

    pub fn rv_ee_cost(&self) -> f64 {
        self.rv_ee.cost(self.payload_items())
    }

    pub fn rv_fv_cost(&self) -> f64 {
        self.rv_fv.cost(self.payload_items())
    }

    /// T_rv = T_rv^(ee) + T_rv^(fv).
    pub fn rv_total(&self) -> f64 {
        self.rv_ee_cost() + self.rv_fv_cost()
    }
}

/// α·log₂G + β·M.
pub fn allreduce_cost(words: f64, group: usize, alpha: f64, beta: f64) -> f64 {
    alpha * (group.max(1) as f64).log2() + beta * words
}

/// 2N·T_allreduce(M_T; G_T).
pub fn target_comm_cost(params: &LatencyParams, layers: usize) -> f64 {
    2.0 * layers as f64
        * allreduce_cost(params.target_shard_words(), params.target_group, params.alpha, params.beta)
}

/// 2J·T_allreduce(M_D; G_D).
pub fn draft_comm_cost(params: &LatencyParams, internal_steps: usize) -> f64 {
    2.0 * internal_steps as f64
        * allreduce_cost(params.draft_shard_words(), params.draft_group, params.alpha, params.beta)
}

/// J·(u^d + s^d).
pub fn draft_gen_time(params: &LatencyParams, internal_steps: usize) -> f64 {
    internal_steps as f64 * params.draft_step_time()
}

/// Time to build a tree whose branches took `branch_steps` internal steps.
/// Branches run in waves of `branch_parallelism`; a wave lasts as long as its
/// longest branch.
pub fn tree_time(params: &LatencyParams, branch_steps: &[usize]) -> f64 {
    let width = params
        .branch_parallelism
        .unwrap_or(branch_steps.len())
        .max(1);
    let steps: usize = branch_steps
        .chunks(width)
        .map(|wave| wave.iter().copied().max().unwrap_or(0))
        .sum();
    steps as f64 * params.tree_step_time()
}

/// Components of one mirror step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepLatency {
    pub prefix: f64,
    /// Δ.
    pub suffix: f64,
    pub draft_gen: f64,
    pub rv_ee: f64,
    pub rv_fv: f64,
    pub total: f64,
}

impl StepLatency {
    pub fn rv(&self) -> f64 {
        self.rv_ee + self.rv_fv
    }

    /// Draft time not hidden under the target suffix.
    pub fn exposed_draft(&self) -> f64 {
        (self.draft_gen - self.suffix).max(0.0)
    }
}

/// prefix + T_rv^(ee) + max(Δ, draft_gen) + T_rv^(fv).
pub fn mirror_step_latency(params: &LatencyParams, draft_gen: f64) -> StepLatency {
    let prefix = params.prefix_time();
    let suffix = params.overlap_budget();
    let rv_ee = params.rv_ee_cost();
    let rv_fv = params.rv_fv_cost();
    StepLatency {
        prefix,
        suffix,
        draft_gen,
        rv_ee,
        rv_fv,
        total: prefix + rv_ee + suffix.max(draft_gen) + rv_fv,
    }
}

/// T_target + draft_gen.
pub fn vanilla_step_latency(params: &LatencyParams, draft_gen: f64) -> f64 {
    params.target_time() + draft_gen
}

/// ΔT = min(Δ, draft_gen) − T_rv and the speedup of mirror over vanilla.
pub fn time_saved_and_speedup(params: &LatencyParams, draft_gen: f64) -> (f64, f64) {
    let prefix = params.prefix_time();
    let delta = params.overlap_budget();
    let rv = params.rv_total();
    let saved = delta.min(draft_gen) - rv;
    let speedup = if draft_gen <= delta {
        (params.target_time() + draft_gen) / (params.target_time() + rv)
    } else {
        (prefix + delta + draft_gen) / (prefix + draft_gen + rv)
    };
    (saved, speedup)
}

/// (κ, SS streams) used at batch size `batch`.
pub fn batching_policy(batch: usize) -> Result<(usize, usize)> {
    Ok(match batch {
        0 => return Err(invalid("batch size must be at least 1")),
        1..=8 => (8, 2),
        9..=16 => (4, 1),
        17..=32 => (2, 1),
        _ => (1, 1),
    })
}

/// Affine growth of compute with batch size: scale = a + b·B.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatchScaling {
    pub target_a: f64,
    pub target_b: f64,
    pub draft_a: f64,
    pub draft_b: f64,
    pub rv_a: f64,
    pub rv_b: f64,
}

impl Default for BatchScaling {
    fn default() -> Self {
        Self {
            target_a: 1.0,
            target_b: 0.0,
            draft_a: 1.0,
            draft_b: 0.025,
            rv_a: 1.0,
            rv_b: 0.05,
        }
    }
}

impl BatchScaling {
    /// No growth at all.
    pub fn flat() -> Self {
        Self {
            target_a: 1.0,
            target_b: 0.0,
            draft_a: 1.0,
            draft_b: 0.0,
            rv_a: 1.0,
            rv_b: 0.0,
        }
    }
}

/// Params for batch `batch` from single-sequence params `base`. Target
/// compute scales by a_T + b_T·B and draft window steps by a_D + b_D·B. Tree
/// steps process κ hypotheses per sequence, so they scale by a_D + b_D·κ·B.
/// Collective word counts follow from `batch` directly.
pub fn batch_scale(base: &LatencyParams, batch: usize, scaling: &BatchScaling) -> Result<LatencyParams> {
    if batch < 1 {
        return Err(invalid("batch size must be at least 1"));
    }
    let b = batch as f64;
    let target = scaling.target_a + scaling.target_b * b;
    let draft = scaling.draft_a + scaling.draft_b * b;
    let tree = scaling.draft_a + scaling.draft_b * base.kappa as f64 * b;
    let rv = scaling.rv_a + scaling.rv_b * b;
    let mut p = base.clone();
    p.batch = batch;
    p.layer_compute.iter_mut().for_each(|u| *u *= target);
    p.draft_step_compute = base.draft_step_compute * draft;
    p.tree_step_compute = Some(base.tree_step_compute.unwrap_or(base.draft_step_compute) * tree);
    p.rv_ee.sample *= rv;
    p.rv_fv.sample *= rv;
    Ok(p)
}
